#include "fracgan/classifier/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "fracgan/common/error.hpp"

namespace fracgan::classifier {
namespace {

void check_inputs(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw ConfigError("labels and scores differ in length (" + std::to_string(labels.size()) + " vs " +
                      std::to_string(scores.size()) + ")");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError("labels must be 0 or 1");
  }
}

}  // namespace

double auc(std::span<const int> labels, std::span<const double> scores) {
  check_inputs(labels, scores);
  const size_t n = labels.size();
  const auto n_pos = static_cast<size_t>(std::count(labels.begin(), labels.end(), 1));
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("AUC needs at least one positive and one negative");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based) mid-ranks of the positives.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += mid_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double average_precision(std::span<const int> labels, std::span<const double> scores) {
  check_inputs(labels, scores);
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos == 0) throw ConfigError("average precision needs at least one positive");

  std::vector<size_t> order(labels.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double sum = 0.0;
  size_t hits = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(n_pos);
}

}  // namespace fracgan::classifier
