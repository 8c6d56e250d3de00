// Classification metrics with pinned semantics, since library definitions
// disagree in the details:
//   - AUROC: Mann-Whitney statistic via midranks, ties count 0.5.
//   - AUPRC: step-interpolated average precision; the descending-score sort
//     breaks ties by original index.
//   - log loss: probabilities clipped into [1e-15, 1 - 1e-15].

#pragma once

#include <cstddef>
#include <vector>

namespace nestseq {

struct ScoredLabels {
  std::vector<double> scores;  // predicted probabilities
  std::vector<bool> labels;
};

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Needs both classes present. O(n log n).
double auroc(const ScoredLabels& sl);

/// Step-interpolated average precision. Needs at least one positive.
double auprc(const ScoredLabels& sl);

/// Mean binary cross-entropy of clipped probabilities.
double log_loss(const ScoredLabels& sl);

}  // namespace nestseq
