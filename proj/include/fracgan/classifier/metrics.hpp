#pragma once

#include <span>

namespace fracgan::classifier {

/// Area under the ROC curve: P(s+ > s-) + 0.5 P(s+ == s-) over all
/// positive/negative pairs, computed from mid-ranks in O(n log n).
/// Throws ConfigError unless both classes are present.
double auc(std::span<const int> labels, std::span<const double> scores);

/// Non-interpolated average precision: mean over positives of precision at
/// the positive's rank. Ranks follow descending score; ties keep their input
/// order. Throws ConfigError when there are no positives.
double average_precision(std::span<const int> labels, std::span<const double> scores);

}  // namespace fracgan::classifier
