#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dflora/backbone/tensor_io.hpp"
#include "dflora/common.hpp"

namespace dflora::backbone {

enum class Target { Q = 0, K = 1, V = 2 };
inline constexpr int kNumTargets = 3;

inline std::string_view to_string(Target t) {
  switch (t) {
    case Target::Q: return "Q";
    case Target::K: return "K";
    case Target::V: return "V";
  }
  return "?";
}

inline Target parse_target(std::string_view s) {
  if (s == "Q" || s == "q") return Target::Q;
  if (s == "K" || s == "k") return Target::K;
  if (s == "V" || s == "v") return Target::V;
  fail("unknown attention target '", s, "' (expected Q, K or V)");
}

struct ModelConfig {
  int layers = 4;
  int hidden = 64;
  // Attention input size k of W in R^{D x k}; 0 means "same as hidden".
  int attn_dim = 0;
  int heads = 1;
  int ffn = 0;  // 0 means 2 * hidden
  int vocab = 100;
  int max_seq_len = 64;
  int mask_token = 2;
  std::uint64_t seed = 0;

  int k() const { return attn_dim > 0 ? attn_dim : hidden; }
  int ffn_dim() const { return ffn > 0 ? ffn : 2 * hidden; }

  void validate() const {
    require(layers >= 1, "model: layers must be positive, got ", layers);
    require(hidden >= 1, "model: hidden size must be positive, got ", hidden);
    require(attn_dim >= 0, "model: attention size must be non-negative, got ", attn_dim);
    require(heads >= 1, "model: heads must be positive, got ", heads);
    require(k() % heads == 0, "model: attention size ", k(), " is not divisible by ", heads,
            " heads");
    require(ffn >= 0, "model: ffn size must be non-negative, got ", ffn);
    require(vocab >= 1, "model: vocabulary must be non-empty");
    require(max_seq_len >= 1, "model: max sequence length must be positive");
    require(mask_token >= 0 && mask_token < vocab, "model: mask token ", mask_token,
            " is outside the vocabulary of ", vocab);
  }
};

struct LayerWeights {
  Vector ln1_gamma, ln1_beta;
  std::array<Matrix, kNumTargets> w;  // W_Q, W_K, W_V, each D x k
  Matrix wo;                          // k x D
  Vector ln2_gamma, ln2_beta;
  Matrix w1;  // D x F
  Vector b1;
  Matrix w2;  // F x D
  Vector b2;
};

// Mutable weight bundle; becomes immutable once wrapped in a FrozenModel.
struct ModelWeights {
  Matrix token_embedding;     // V x D, also the readout
  Matrix position_embedding;  // S x D
  std::vector<LayerWeights> layers;
  Vector final_gamma, final_beta;
};

// Low-rank perturbation B A of one attention weight slot.
struct LowRankPair {
  Matrix a;  // r x k
  Matrix b;  // D x r
  Target target = Target::Q;
  int layer = 0;

  int rank() const { return static_cast<int>(a.rows()); }
};

// W + B A. W is never modified.
inline Matrix effective_weight(const Matrix& w, const LowRankPair& pair) {
  require(pair.b.cols() == pair.a.rows(), "low-rank pair: B has ", pair.b.cols(),
          " columns but A has ", pair.a.rows(), " rows");
  require(pair.b.rows() == w.rows() && pair.a.cols() == w.cols(), "low-rank pair: B A is ",
          pair.b.rows(), "x", pair.a.cols(), " but W is ", w.rows(), "x", w.cols());
  Matrix out = w;
  out.noalias() += pair.b * pair.a;
  return out;
}

// Token ids of one input sequence; must contain the mask token exactly once.
using TokenSequence = std::vector<int>;

struct HiddenStats {
  std::vector<double> sigma;  // per layer
  std::int64_t samples = 0;   // entries pooled per layer
};

namespace detail {

inline Matrix layer_norm(const Matrix& x, const Vector& gamma, const Vector& beta) {
  constexpr double eps = 1e-5;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    out.row(i) = ((x.row(i).array() - mean) * inv).matrix().cwiseProduct(gamma.transpose()) +
                 beta.transpose();
  }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

}  // namespace detail

class FrozenModel {
 public:
  FrozenModel(ModelConfig config, ModelWeights weights)
      : config_(config), w_(std::make_shared<const ModelWeights>(std::move(weights))) {
    config_.validate();
    check_shapes();
  }

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return *w_; }
  int layers() const { return config_.layers; }
  int hidden() const { return config_.hidden; }
  int k() const { return config_.k(); }
  int vocab() const { return config_.vocab; }

  // Mask-position logits (batch x V) with the given deltas applied.
  Matrix forward(std::span<const LowRankPair> deltas,
                 std::span<const TokenSequence> batch) const {
    Matrix logits(static_cast<Eigen::Index>(batch.size()), config_.vocab);
    const Matrix readout = mask_states(deltas, batch);
    logits.noalias() = readout * w_->token_embedding.transpose();
    return logits;
  }

  // Final-layer-normed hidden state at each sequence's mask position (batch x D).
  Matrix mask_states(std::span<const LowRankPair> deltas,
                     std::span<const TokenSequence> batch) const {
    const auto eff = effective_weights(deltas);
    Matrix out(static_cast<Eigen::Index>(batch.size()), config_.hidden);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const int mask = mask_position(batch[s], s);
      Matrix x = embed(batch[s]);
      for (int l = 0; l < config_.layers; ++l) x = run_layer(l, eff, x);
      const Matrix row = x.row(mask);
      out.row(static_cast<Eigen::Index>(s)) =
          detail::layer_norm(row, w_->final_gamma, w_->final_beta);
    }
    return out;
  }

  // Output hidden states of every layer for one sequence (layers x (T x D)).
  std::vector<Matrix> layer_outputs(std::span<const LowRankPair> deltas,
                                    const TokenSequence& tokens) const {
    const auto eff = effective_weights(deltas);
    mask_position(tokens, 0);
    std::vector<Matrix> outs;
    Matrix x = embed(tokens);
    for (int l = 0; l < config_.layers; ++l) {
      x = run_layer(l, eff, x);
      outs.push_back(x);
    }
    return outs;
  }

  // Per-layer standard deviation of the zero-delta hidden states, pooled over
  // all positions and dimensions of the calibration batch.
  HiddenStats hidden_stats(std::span<const TokenSequence> calibration) const {
    require(!calibration.empty(), "hidden stats: calibration batch is empty");
    const int nl = config_.layers;
    // Welford accumulators per layer.
    std::vector<double> mean(nl, 0.0), m2(nl, 0.0);
    std::int64_t count = 0;
    for (const auto& seq : calibration) {
      const auto outs = layer_outputs({}, seq);
      const std::int64_t base = count;
      for (int l = 0; l < nl; ++l) {
        std::int64_t c = base;
        const Matrix& h = outs[l];
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
          for (Eigen::Index j = 0; j < h.cols(); ++j) {
            ++c;
            const double delta = h(i, j) - mean[l];
            mean[l] += delta / static_cast<double>(c);
            m2[l] += delta * (h(i, j) - mean[l]);
          }
        }
        if (l == nl - 1) count = c;
      }
    }
    HiddenStats stats;
    stats.samples = count;
    for (int l = 0; l < nl; ++l) {
      const double sd = std::sqrt(m2[l] / static_cast<double>(count));
      if (!(sd >= 1e-9)) {
        throw DegenerateStats(concat("hidden stats: layer ", l, " has degenerate standard deviation ",
                                     sd, " (< 1e-9); the calibration input carries no signal"));
      }
      stats.sigma.push_back(sd);
    }
    return stats;
  }

  // Hash over every weight in a fixed order; used to audit the freeze invariant.
  std::uint64_t checksum() const {
    Fnv1a h;
    for (const auto& t : export_tensors()) h.update(t.data.data(), t.data.size() * sizeof(double));
    return h.digest();
  }

  std::vector<NamedTensor> export_tensors() const {
    std::vector<NamedTensor> out;
    out.push_back(NamedTensor::from_matrix("embed.tokens", w_->token_embedding));
    out.push_back(NamedTensor::from_matrix("embed.positions", w_->position_embedding));
    for (int l = 0; l < config_.layers; ++l) {
      const auto& lw = w_->layers[l];
      const auto p = concat("layers.", l, ".");
      out.push_back(NamedTensor::from_vector(p + "ln1.gamma", lw.ln1_gamma));
      out.push_back(NamedTensor::from_vector(p + "ln1.beta", lw.ln1_beta));
      out.push_back(NamedTensor::from_matrix(p + "attn.wq", lw.w[0]));
      out.push_back(NamedTensor::from_matrix(p + "attn.wk", lw.w[1]));
      out.push_back(NamedTensor::from_matrix(p + "attn.wv", lw.w[2]));
      out.push_back(NamedTensor::from_matrix(p + "attn.wo", lw.wo));
      out.push_back(NamedTensor::from_vector(p + "ln2.gamma", lw.ln2_gamma));
      out.push_back(NamedTensor::from_vector(p + "ln2.beta", lw.ln2_beta));
      out.push_back(NamedTensor::from_matrix(p + "ffn.w1", lw.w1));
      out.push_back(NamedTensor::from_vector(p + "ffn.b1", lw.b1));
      out.push_back(NamedTensor::from_matrix(p + "ffn.w2", lw.w2));
      out.push_back(NamedTensor::from_vector(p + "ffn.b2", lw.b2));
    }
    out.push_back(NamedTensor::from_vector("final_ln.gamma", w_->final_gamma));
    out.push_back(NamedTensor::from_vector("final_ln.beta", w_->final_beta));
    return out;
  }

  static FrozenModel import_tensors(const ModelConfig& config,
                                    const std::vector<NamedTensor>& tensors) {
    config.validate();
    const auto named = by_name(tensors);
    auto get = [&](const std::string& name) -> const NamedTensor& {
      auto it = named.find(name);
      if (it == named.end()) throw ParseError(concat("missing tensor '", name, "'"));
      return it->second;
    };
    ModelWeights w;
    w.token_embedding = get("embed.tokens").to_matrix();
    w.position_embedding = get("embed.positions").to_matrix();
    for (int l = 0; l < config.layers; ++l) {
      const auto p = concat("layers.", l, ".");
      LayerWeights lw;
      lw.ln1_gamma = get(p + "ln1.gamma").to_vector();
      lw.ln1_beta = get(p + "ln1.beta").to_vector();
      lw.w[0] = get(p + "attn.wq").to_matrix();
      lw.w[1] = get(p + "attn.wk").to_matrix();
      lw.w[2] = get(p + "attn.wv").to_matrix();
      lw.wo = get(p + "attn.wo").to_matrix();
      lw.ln2_gamma = get(p + "ln2.gamma").to_vector();
      lw.ln2_beta = get(p + "ln2.beta").to_vector();
      lw.w1 = get(p + "ffn.w1").to_matrix();
      lw.b1 = get(p + "ffn.b1").to_vector();
      lw.w2 = get(p + "ffn.w2").to_matrix();
      lw.b2 = get(p + "ffn.b2").to_vector();
      w.layers.push_back(std::move(lw));
    }
    w.final_gamma = get("final_ln.gamma").to_vector();
    w.final_beta = get("final_ln.beta").to_vector();
    return FrozenModel(config, std::move(w));
  }

  // Validates a delta list against this model: layer and shape ranges, at
  // most one pair per (layer, target) slot.
  void check_deltas(std::span<const LowRankPair> deltas) const {
    std::vector<bool> used(static_cast<std::size_t>(config_.layers) * kNumTargets, false);
    for (const auto& d : deltas) {
      require(d.layer >= 0 && d.layer < config_.layers, "delta references layer ", d.layer,
              " but the model has ", config_.layers);
      const int t = static_cast<int>(d.target);
      require(t >= 0 && t < kNumTargets, "delta references an unknown target slot");
      auto slot = used.begin() + d.layer * kNumTargets + t;
      require(!*slot, "duplicate delta for layer ", d.layer, " target ", to_string(d.target));
      *slot = true;
      require(d.b.rows() == config_.hidden && d.a.cols() == config_.k() &&
                  d.b.cols() == d.a.rows(),
              "delta for layer ", d.layer, " target ", to_string(d.target), " has B ", d.b.rows(),
              "x", d.b.cols(), " and A ", d.a.rows(), "x", d.a.cols(), "; expected B ",
              config_.hidden, "xr and A rx", config_.k());
    }
  }

 private:
  using EffectiveWeights = std::vector<std::array<const Matrix*, kNumTargets>>;

  struct Resolved {
    EffectiveWeights slots;
    std::vector<Matrix> storage;
  };

  Resolved effective_weights(std::span<const LowRankPair> deltas) const {
    check_deltas(deltas);
    Resolved r;
    r.storage.reserve(deltas.size());
    r.slots.resize(config_.layers);
    for (int l = 0; l < config_.layers; ++l) {
      for (int t = 0; t < kNumTargets; ++t) r.slots[l][t] = &w_->layers[l].w[t];
    }
    for (const auto& d : deltas) {
      r.storage.push_back(effective_weight(w_->layers[d.layer].w[static_cast<int>(d.target)], d));
    }
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      r.slots[deltas[i].layer][static_cast<int>(deltas[i].target)] = &r.storage[i];
    }
    return r;
  }

  int mask_position(const TokenSequence& tokens, std::size_t index) const {
    require(!tokens.empty(), "sequence ", index, " is empty");
    require(static_cast<int>(tokens.size()) <= config_.max_seq_len, "sequence ", index,
            " has length ", tokens.size(), " above the maximum ", config_.max_seq_len);
    int pos = -1;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      require(tokens[i] >= 0 && tokens[i] < config_.vocab, "sequence ", index,
              " contains token id ", tokens[i], " outside the vocabulary");
      if (tokens[i] == config_.mask_token) {
        require(pos < 0, "sequence ", index, " contains more than one mask token");
        pos = static_cast<int>(i);
      }
    }
    require(pos >= 0, "sequence ", index, " contains no mask token");
    return pos;
  }

  Matrix embed(const TokenSequence& tokens) const {
    Matrix x(static_cast<Eigen::Index>(tokens.size()), config_.hidden);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) =
          w_->token_embedding.row(tokens[i]) + w_->position_embedding.row(static_cast<Eigen::Index>(i));
    }
    return x;
  }

  Matrix run_layer(int l, const Resolved& eff, const Matrix& x) const {
    const auto& lw = w_->layers[l];
    const Matrix a = detail::layer_norm(x, lw.ln1_gamma, lw.ln1_beta);
    const Matrix q = a * *eff.slots[l][0];
    const Matrix kmat = a * *eff.slots[l][1];
    const Matrix v = a * *eff.slots[l][2];

    const int heads = config_.heads;
    const int dh = config_.k() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix attended(x.rows(), config_.k());
    for (int h = 0; h < heads; ++h) {
      Matrix scores = q.middleCols(h * dh, dh) * kmat.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      attended.middleCols(h * dh, dh).noalias() = scores * v.middleCols(h * dh, dh);
    }
    Matrix out = x;
    out.noalias() += attended * lw.wo;

    const Matrix f = detail::layer_norm(out, lw.ln2_gamma, lw.ln2_beta);
    Matrix hidden = f * lw.w1;
    hidden.rowwise() += lw.b1.transpose();
    hidden = hidden.unaryExpr([](double z) { return detail::gelu(z); });
    Matrix ffn_out = hidden * lw.w2;
    ffn_out.rowwise() += lw.b2.transpose();
    out += ffn_out;
    return out;
  }

  void check_shapes() const {
    const auto& w = *w_;
    const int d = config_.hidden, kk = config_.k(), f = config_.ffn_dim();
    auto shape = [](const Matrix& m, Eigen::Index r, Eigen::Index c, const char* what) {
      require(m.rows() == r && m.cols() == c, "model: ", what, " is ", m.rows(), "x", m.cols(),
              ", expected ", r, "x", c);
    };
    auto len = [](const Vector& v, Eigen::Index n, const char* what) {
      require(v.size() == n, "model: ", what, " has length ", v.size(), ", expected ", n);
    };
    shape(w.token_embedding, config_.vocab, d, "token embedding");
    shape(w.position_embedding, config_.max_seq_len, d, "position embedding");
    require(static_cast<int>(w.layers.size()) == config_.layers, "model: expected ",
            config_.layers, " layers, got ", w.layers.size());
    for (const auto& lw : w.layers) {
      len(lw.ln1_gamma, d, "ln1 gamma");
      len(lw.ln1_beta, d, "ln1 beta");
      for (const auto& m : lw.w) shape(m, d, kk, "attention weight");
      shape(lw.wo, kk, d, "attention output");
      len(lw.ln2_gamma, d, "ln2 gamma");
      len(lw.ln2_beta, d, "ln2 beta");
      shape(lw.w1, d, f, "ffn w1");
      len(lw.b1, f, "ffn b1");
      shape(lw.w2, f, d, "ffn w2");
      len(lw.b2, d, "ffn b2");
    }
    len(w.final_gamma, d, "final gamma");
    len(w.final_beta, d, "final beta");
  }

  ModelConfig config_;
  std::shared_ptr<const ModelWeights> w_;
};

// Seeded random weights: N(0, 1) embeddings, N(0, 0.1^2) positions,
// N(0, 1/fan_in) projections, zero biases, unit layer-norm gains.
inline ModelWeights random_weights(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double sd) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = sd * normal(rng);
    }
    return m;
  };
  const int d = config.hidden, kk = config.k(), f = config.ffn_dim();
  ModelWeights w;
  w.token_embedding = gaussian(config.vocab, d, 1.0);
  w.position_embedding = gaussian(config.max_seq_len, d, 0.1);
  for (int l = 0; l < config.layers; ++l) {
    LayerWeights lw;
    lw.ln1_gamma = Vector::Ones(d);
    lw.ln1_beta = Vector::Zero(d);
    for (auto& m : lw.w) m = gaussian(d, kk, 1.0 / std::sqrt(static_cast<double>(d)));
    lw.wo = gaussian(kk, d, 1.0 / std::sqrt(static_cast<double>(kk)));
    lw.ln2_gamma = Vector::Ones(d);
    lw.ln2_beta = Vector::Zero(d);
    lw.w1 = gaussian(d, f, 1.0 / std::sqrt(static_cast<double>(d)));
    lw.b1 = Vector::Zero(f);
    lw.w2 = gaussian(f, d, 1.0 / std::sqrt(static_cast<double>(f)));
    lw.b2 = Vector::Zero(d);
    w.layers.push_back(std::move(lw));
  }
  w.final_gamma = Vector::Ones(d);
  w.final_beta = Vector::Zero(d);
  return w;
}

inline FrozenModel build_model(const ModelConfig& config) {
  return FrozenModel(config, random_weights(config));
}

}  // namespace dflora::backbone
