#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dflora/common.hpp"
#include "dflora/task/prompt.hpp"

namespace dflora::task {

enum class LossKind { cross_entropy, hinge };

inline std::string_view to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "hinge";
}

inline LossKind parse_loss(std::string_view s) {
  if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
  if (s == "hinge") return LossKind::hinge;
  fail("unknown loss '", s, "' (expected cross_entropy or hinge)");
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> f1;
  std::int64_t count = 0;
  std::int64_t correct = 0;
};

namespace detail {

// -log softmax(scores)[target], exact for +inf entries.
inline double cross_entropy(const Vector& scores, int target) {
  const double mx = scores.maxCoeff();
  if (std::isinf(mx) && mx > 0) {
    const auto winners = (scores.array() == mx).count();
    return scores[target] == mx ? std::log(static_cast<double>(winners))
                                : std::numeric_limits<double>::infinity();
  }
  const double lse = mx + std::log((scores.array() - mx).exp().sum());
  return lse - scores[target];
}

// Crammer-Singer multiclass hinge with unit margin.
inline double hinge(const Vector& scores, int target) {
  double worst = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < scores.size(); ++c) {
    if (c != target) worst = std::max(worst, scores[c]);
  }
  if (scores.size() == 1) return 0.0;
  return std::max(0.0, 1.0 + worst - scores[target]);
}

}  // namespace detail

// Scores only the verbalizer columns of the logits. Ties in the argmax go to
// the lower class id. F1 treats class 1 as positive and needs two classes.
inline EvalResult loss_and_metrics(const Matrix& logits, std::span<const int> labels,
                                   const Verbalizer& verbalizer,
                                   LossKind kind = LossKind::cross_entropy, bool with_f1 = false) {
  require(logits.rows() == static_cast<Eigen::Index>(labels.size()), "metrics: ", logits.rows(),
          " logit rows for ", labels.size(), " labels");
  require(!labels.empty(), "metrics: empty batch");
  const int classes = verbalizer.num_classes();
  for (int t : verbalizer.tokens()) {
    require(t < logits.cols(), "metrics: verbalizer token ", t, " outside ", logits.cols(),
            " logit columns");
  }
  require(!with_f1 || classes == 2, "metrics: F1 needs a binary task");

  EvalResult r;
  std::int64_t tp = 0, fp = 0, fn = 0;
  double total = 0.0;
  Vector scores(classes);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < classes, "metrics: label ", y, " is not a class id");
    for (int c = 0; c < classes; ++c) scores[c] = logits(i, verbalizer.token(c));
    total += kind == LossKind::cross_entropy ? detail::cross_entropy(scores, y)
                                             : detail::hinge(scores, y);
    int pred = 0;
    for (int c = 1; c < classes; ++c) {
      if (scores[c] > scores[pred]) pred = c;
    }
    r.correct += pred == y;
    tp += pred == 1 && y == 1;
    fp += pred == 1 && y != 1;
    fn += pred != 1 && y == 1;
  }
  r.count = logits.rows();
  r.loss = total / static_cast<double>(r.count);
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.count);
  if (with_f1) {
    const auto denom = 2 * tp + fp + fn;
    r.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return r;
}

}  // namespace dflora::task
