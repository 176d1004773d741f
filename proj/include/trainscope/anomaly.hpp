#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "trainscope/model.hpp"
#include "trainscope/stats.hpp"

namespace trainscope {

using FlagSequence = std::vector<std::uint8_t>;

// Rule predicates over a 0/1 correctness sequence. Both flag the flip index j
// (seq[j] != seq[j-1]). The left rule additionally needs seq[j-k..j-1] constant,
// the right rule needs seq[j..j+k-1] constant.
bool left_rule_fires(std::span<const std::uint8_t> seq, std::size_t j, int k);
bool right_rule_fires(std::span<const std::uint8_t> seq, std::size_t j, int k);

/// Throws InvalidArgument when k < 1.
FlagSequence left_flags(std::span<const std::uint8_t> seq, int k);
FlagSequence right_flags(std::span<const std::uint8_t> seq, int k);

struct ClassScores {
  Eigen::VectorXi left;
  Eigen::VectorXi right;
};

/// Per-dump sums of the per-image rule flags over one class.
ClassScores class_anomaly_scores(const ValidationMatrix& vm, int class_id, int k);

enum class RuleKind { Left, Right };
std::string_view to_string(RuleKind kind);

struct AnomalyEvent {
  int class_id = 0;
  std::int64_t iteration = 0;
  int dump_index = 0;
  RuleKind kind = RuleKind::Left;
  int score = 0;  // flagged images
  double score_fraction = 0;

  bool operator==(const AnomalyEvent&) const = default;
};

void to_json(nlohmann::json& j, const AnomalyEvent& e);

/// Events of one class, from precomputed scores.
std::vector<AnomalyEvent> class_events(int class_id, int class_size, const ClassScores& scores,
                                       std::span<const std::int64_t> iterations, double min_fraction);

/// Events whose score is at least `min_fraction` of the class size, sorted by
/// (class, iteration, kind). `iterations` maps dump index to iteration number.
std::vector<AnomalyEvent> detect_anomalies(const ValidationMatrix& vm,
                                           std::span<const std::int64_t> iterations, int k,
                                           double min_fraction);

struct AnomalyFilterSet {
  std::int64_t iteration = 0;
  int layer_ordinal = 0;
  std::string layer_id;
  std::vector<int> filters;  // ascending

  bool operator==(const AnomalyFilterSet&) const = default;
};

/// Global top-k ranking at one dumped iteration.
using TopFilterQuery = std::function<std::vector<RankedFilter>(std::int64_t iteration, int k)>;

/// For every distinct event iteration, the global top_k filters grouped by layer
/// (layers in network order). Layer ids come from `network`.
std::map<std::int64_t, std::vector<AnomalyFilterSet>> anomaly_filters(
    const std::vector<AnomalyEvent>& events, int top_k, const TopFilterQuery& top_filters,
    const NetworkHierarchy& network);

}  // namespace trainscope
