#include "nestseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nestseq {

namespace {

void check_shape(const ScoredLabels& sl, const char* where) {
  if (sl.scores.empty()) throw std::invalid_argument(std::string(where) + ": no samples");
  if (sl.scores.size() != sl.labels.size()) {
    throw std::invalid_argument(std::string(where) + ": scores and labels differ in length");
  }
  for (double s : sl.scores) {
    if (!std::isfinite(s)) throw std::invalid_argument(std::string(where) + ": non-finite score");
  }
}

std::size_t count_positives(const ScoredLabels& sl) {
  return static_cast<std::size_t>(std::count(sl.labels.begin(), sl.labels.end(), true));
}

}  // namespace

double auroc(const ScoredLabels& sl) {
  check_shape(sl, "auroc");
  const std::size_t n = sl.scores.size();
  const std::size_t n_pos = count_positives(sl);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument(
        "auroc: needs at least one positive and one negative sample, got " +
        std::to_string(n_pos) + " positives out of " + std::to_string(n));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sl.scores[a] < sl.scores[b]; });

  // Midranks: every member of a tie group gets the group's average rank,
  // which makes the rank-sum statistic count tied pairs as one half.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && sl.scores[order[j]] == sl.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average
    for (std::size_t k = i; k < j; ++k) {
      if (sl.labels[order[k]]) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double auprc(const ScoredLabels& sl) {
  check_shape(sl, "auprc");
  const std::size_t n = sl.scores.size();
  const std::size_t n_pos = count_positives(sl);
  if (n_pos == 0) throw std::invalid_argument("auprc: needs at least one positive sample");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sl.scores[a] != sl.scores[b]) return sl.scores[a] > sl.scores[b];
    return a < b;  // deterministic tie-break keeps results platform-stable
  });

  // AP = sum over positive-hitting ranks k of P(k) * (R(k) - R(k-1)),
  // where each positive advances recall by 1/n_pos.
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!sl.labels[order[k]]) continue;
    ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    ap += precision / static_cast<double>(n_pos);
  }
  return ap;
}

double log_loss(const ScoredLabels& sl) {
  check_shape(sl, "log_loss");
  constexpr double kClip = 1e-15;
  double total = 0.0;
  for (std::size_t i = 0; i < sl.scores.size(); ++i) {
    const double p = std::clamp(sl.scores[i], kClip, 1.0 - kClip);
    total += sl.labels[i] ? -std::log(p) : -std::log1p(-p);
  }
  return total / static_cast<double>(sl.scores.size());
}

}  // namespace nestseq
