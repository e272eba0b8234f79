#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dflora/backbone/model.hpp"
#include "dflora/common.hpp"
#include "dflora/subspace/projection.hpp"
#include "dflora/task/corpus.hpp"
#include "dflora/task/dataset.hpp"

namespace dflora::orchestrator {

struct SynthOptions {
  int num_classes = 2;
  int per_class = 16;  // few-shot n
  // 0 = clean class prototypes, 1 = noisy ones.
  double difficulty = 0.3;
  std::uint64_t seed = 0;
  // Extra salt for the backbone weights only; the corpus does not change.
  std::uint64_t model_seed = 0;

  int layers = 4;
  int hidden = 32;
  int heads = 2;
  int sentence_length = 4;
  int class_words = 6;
  int neutral_words = 40;
  int pool_per_class = 100;
  // Zero-delta accuracy the readout bias is tuned down to.
  double baseline_ceiling = 0.55;
  double readout_scale = 4.0;
};

struct SynthTask {
  backbone::FrozenModel model;
  std::vector<task::Instance> corpus;
  task::FewShotSplit split;
  task::PromptTask task;
  std::vector<std::string> pattern;
  std::map<int, std::string> verbalizer;
  double readout_bias = 0.0;
};

// Multinomial logistic regression by full-batch gradient descent with a small
// L2 penalty. Returns training accuracy.
inline double linear_probe_accuracy(const Matrix& features, std::span<const int> labels,
                                    int num_classes, int iterations = 500, double rate = 0.5,
                                    double l2 = 1e-4) {
  require(features.rows() == static_cast<Eigen::Index>(labels.size()) && features.rows() > 0,
          "probe: feature rows do not match labels");
  const auto n = features.rows();
  // Standardize columns; append a bias column.
  Matrix x(n, features.cols() + 1);
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const double mean = features.col(j).mean();
    const double sd = std::sqrt((features.col(j).array() - mean).square().mean());
    x.col(j) = (features.col(j).array() - mean) / (sd > 0.0 ? sd : 1.0);
  }
  x.col(features.cols()).setOnes();
  Matrix y = Matrix::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) y(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  Matrix w = Matrix::Zero(x.cols(), num_classes);
  for (int it = 0; it < iterations; ++it) {
    Matrix p = x * w;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    const Matrix grad = x.transpose() * (p - y) / static_cast<double>(n) + l2 * w;
    w -= rate * grad;
  }
  const Matrix scores = x * w;
  std::int64_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg;
    scores.row(i).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// Generates a toy frozen encoder and a class-balanced word-level corpus.
// Each sentence holds one class word (drawn around its class prototype)
// among neutral words, rendered through ["text", "It", "was", "<mask>", "."].
// The verbalizer rows of the tied readout are set to the class directions of
// the frozen mask states plus a bias toward class 0, raised until the
// zero-delta accuracy drops to baseline_ceiling. The verbalizer words never
// occur in inputs, so this leaves every hidden state untouched.
inline SynthTask synth_task(const SynthOptions& o) {
  require(o.num_classes >= 2, "synth: need at least two classes");
  require(o.per_class >= 1 && o.pool_per_class >= 2 * o.per_class,
          "synth: pool must hold at least 2n instances per class");
  require(o.sentence_length >= 1 && o.class_words >= 1 && o.neutral_words >= 1,
          "synth: sentence shape must be positive");
  require(o.difficulty >= 0.0 && o.difficulty <= 1.0, "synth: difficulty must lie in [0, 1]");

  std::mt19937_64 rng(subspace::mix_seed(o.seed, 0x5e7));
  std::uniform_int_distribution<int> pick_neutral(0, o.neutral_words - 1);
  std::uniform_int_distribution<int> pick_class_word(0, o.class_words - 1);
  std::uniform_int_distribution<int> pick_slot(0, o.sentence_length - 1);

  struct {
    std::vector<task::Instance> corpus;
    task::FewShotSplit split;
    std::vector<std::string> pattern{"text", "It", "was", "<mask>", "."};
    std::map<int, std::string> verbalizer;
    double readout_bias = 0.0;
  } out;
  for (int c = 0; c < o.num_classes; ++c) {
    out.verbalizer[c] = o.num_classes == 2 ? (c == 0 ? "bad" : "great") : concat("label", c);
  }
  for (int c = 0; c < o.num_classes; ++c) {
    for (int i = 0; i < o.pool_per_class; ++i) {
      std::string text;
      const int slot = pick_slot(rng);
      for (int p = 0; p < o.sentence_length; ++p) {
        if (!text.empty()) text += ' ';
        text += p == slot ? concat("c", c, "w", pick_class_word(rng)) : concat("w", pick_neutral(rng));
      }
      out.corpus.push_back({c, {text}});
    }
  }
  out.split = task::sample_few_shot(out.corpus, o.per_class, o.num_classes,
                                    subspace::mix_seed(o.seed, 0xda7a));
  const int max_len = o.sentence_length + 4;
  task::PromptTask prompt = task::build_prompt_task(out.split, out.pattern, out.verbalizer,
                                                     task::Schema::single_sentence, max_len);

  backbone::ModelConfig mc;
  mc.layers = o.layers;
  mc.hidden = o.hidden;
  mc.heads = o.heads;
  mc.vocab = prompt.vocab.size();
  mc.max_seq_len = max_len;
  mc.mask_token = task::kMaskId;
  mc.seed = subspace::mix_seed(o.seed, 0x30de1 + o.model_seed);
  backbone::ModelWeights w = backbone::random_weights(mc);

  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise = 0.3 + 0.7 * o.difficulty;
  for (int c = 0; c < o.num_classes; ++c) {
    Vector proto(o.hidden);
    for (auto& v : proto) v = normal(rng);
    for (int j = 0; j < o.class_words; ++j) {
      const int id = prompt.vocab.id(concat("c", c, "w", j));
      for (int d = 0; d < o.hidden; ++d) w.token_embedding(id, d) = proto[d] + noise * normal(rng);
    }
  }

  // Class directions of the frozen mask states over the train and dev pool.
  std::vector<backbone::TokenSequence> calib = prompt.train.inputs;
  calib.insert(calib.end(), prompt.dev.inputs.begin(), prompt.dev.inputs.end());
  std::vector<int> calib_labels = prompt.train.labels;
  calib_labels.insert(calib_labels.end(), prompt.dev.labels.begin(), prompt.dev.labels.end());
  const Matrix states = backbone::FrozenModel(mc, w).mask_states({}, calib);
  const Vector overall = states.colwise().mean();
  std::vector<Vector> direction(static_cast<std::size_t>(o.num_classes), Vector::Zero(o.hidden));
  std::vector<int> counts(static_cast<std::size_t>(o.num_classes), 0);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const auto c = static_cast<std::size_t>(calib_labels[static_cast<std::size_t>(i)]);
    direction[c] += states.row(i).transpose();
    ++counts[c];
  }
  const Vector unit_mean = overall.normalized();
  for (int c = 0; c < o.num_classes; ++c) {
    auto& dir = direction[static_cast<std::size_t>(c)];
    dir = dir / counts[static_cast<std::size_t>(c)] - overall;
    dir = o.readout_scale * dir.normalized();
  }

  auto accuracy_with_bias = [&](double bias) {
    std::int64_t correct = 0;
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      int pred = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < o.num_classes; ++c) {
        double s = states.row(i).dot(direction[static_cast<std::size_t>(c)]);
        if (c == 0) s += bias * states.row(i).dot(unit_mean);
        if (s > best) {
          best = s;
          pred = c;
        }
      }
      correct += pred == calib_labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(states.rows());
  };
  double bias = 0.0;
  while (accuracy_with_bias(bias) > o.baseline_ceiling && bias < 1e6) {
    bias = bias == 0.0 ? 0.05 : bias * 1.25;
  }
  out.readout_bias = bias;
  for (int c = 0; c < o.num_classes; ++c) {
    Vector row = direction[static_cast<std::size_t>(c)];
    if (c == 0) row += bias * unit_mean;
    w.token_embedding.row(prompt.verbalizer.token(c)) = row.transpose();
  }
  return SynthTask{backbone::FrozenModel(mc, std::move(w)), std::move(out.corpus),
                   std::move(out.split), std::move(prompt), std::move(out.pattern),
                   std::move(out.verbalizer), out.readout_bias};
}

}  // namespace dflora::orchestrator
