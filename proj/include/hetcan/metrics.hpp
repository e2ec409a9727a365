#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "hetcan/common.hpp"

namespace hetcan {

// F1 scores for single-label predictions. Micro pools TP/FP/FN over all
// classes; macro averages per-class F1, counting classes absent from both
// pred and truth as 0.
struct F1Pair {
  double micro = 0.0;
  double macro = 0.0;
};

inline F1Pair micro_macro_f1(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth,
                             Index num_classes) {
  if (pred.size() != truth.size())
    throw DataError("micro_macro_f1: " + std::to_string(pred.size()) + " predictions vs " +
                    std::to_string(truth.size()) + " labels");
  if (pred.empty()) throw DataError("micro_macro_f1: empty prediction set");
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fn(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int32_t p = pred[i], t = truth[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes)
      throw DataError("micro_macro_f1: label outside [0," + std::to_string(num_classes) + ")");
    if (p == t) {
      ++tp[static_cast<std::size_t>(p)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(t)];
    }
  }
  F1Pair out;
  long tps = 0, fps = 0, fns = 0;
  for (Index c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    tps += tp[ci];
    fps += fp[ci];
    fns += fn[ci];
    const double denom = 2.0 * tp[ci] + fp[ci] + fn[ci];
    out.macro += denom > 0.0 ? 2.0 * tp[ci] / denom : 0.0;
  }
  out.macro /= static_cast<double>(num_classes);
  const double micro_denom = 2.0 * tps + fps + fns;
  out.micro = micro_denom > 0.0 ? 2.0 * tps / micro_denom : 0.0;
  return out;
}

// Multi-label variant over binary indicator rows [n x C].
inline F1Pair multilabel_f1(const std::vector<std::vector<char>>& pred,
                            const std::vector<std::vector<char>>& truth, Index num_classes) {
  if (pred.size() != truth.size() || pred.empty())
    throw DataError("multilabel_f1: prediction/truth size mismatch or empty");
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fn(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (Index c = 0; c < num_classes; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const bool p = pred[i][ci], t = truth[i][ci];
      if (p && t) ++tp[ci];
      else if (p) ++fp[ci];
      else if (t) ++fn[ci];
    }
  F1Pair out;
  long tps = 0, fps = 0, fns = 0;
  for (Index c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    tps += tp[ci];
    fps += fp[ci];
    fns += fn[ci];
    const double denom = 2.0 * tp[ci] + fp[ci] + fn[ci];
    out.macro += denom > 0.0 ? 2.0 * tp[ci] / denom : 0.0;
  }
  out.macro /= static_cast<double>(num_classes);
  const double micro_denom = 2.0 * tps + fps + fns;
  out.micro = micro_denom > 0.0 ? 2.0 * tps / micro_denom : 0.0;
  return out;
}

inline double accuracy(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw DataError("accuracy: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Mann-Whitney AUC via rank-sum with average ranks for ties, equal to
// P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("roc_auc: size mismatch or empty");
  long pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) ++pos;
    else if (l == 0) ++neg;
    else throw DataError("roc_auc: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) throw DataError("roc_auc: need both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

// One ranking query: candidate scores with exactly one positive among them.
struct RankGroup {
  std::vector<double> scores;
  Index positive_index = 0;
};

// rank = 1 + #(negatives scored strictly higher) + 0.5 #(ties); MRR is the
// mean reciprocal rank over groups.
inline double mrr(const std::vector<RankGroup>& groups) {
  if (groups.empty()) throw DataError("mrr: no groups");
  double total = 0.0;
  for (const auto& g : groups) {
    if (g.positive_index < 0 || g.positive_index >= static_cast<Index>(g.scores.size()))
      throw DataError("mrr: group lacks a valid positive");
    if (g.scores.size() < 2) throw DataError("mrr: group needs at least one negative");
    const double ps = g.scores[static_cast<std::size_t>(g.positive_index)];
    double rank = 1.0;
    for (std::size_t j = 0; j < g.scores.size(); ++j) {
      if (static_cast<Index>(j) == g.positive_index) continue;
      if (g.scores[j] > ps) rank += 1.0;
      else if (g.scores[j] == ps) rank += 0.5;
    }
    total += 1.0 / rank;
  }
  return total / static_cast<double>(groups.size());
}

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw DataError("mean: empty");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Population standard deviation: a single run reports exactly 0.
inline double stddev(const std::vector<double>& xs) {
  const double mu = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace hetcan
