#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trainscope/anomaly.hpp"

namespace trainscope {

/// Sorted, duplicate-free element ids.
using ElementSet = std::vector<int>;

/// Disjoint mini-sets whose unions rebuild every target set exactly.
struct MiniSetPartition {
  std::string layer_id;
  /// Mini-set id = position; ids follow creation order.
  std::vector<ElementSet> minisets;
  /// Target key (target index, or anomaly iteration for layer partitions) ->
  /// ids of the mini-sets composing that target, ascending.
  std::map<std::int64_t, std::vector<int>> membership;
};

/// Iterative splitting: each target splits every existing mini-set into its
/// intersection with the target and the remainder; whatever is left of the
/// target becomes a new mini-set. Membership is keyed by target index.
MiniSetPartition min_set_partition(const std::vector<ElementSet>& targets);

/// Groups elements by their membership bit-vector over the targets. Produces
/// the coarsest partition from which every target can be assembled.
MiniSetPartition signature_partition(const std::vector<ElementSet>& targets);

/// Partition of one layer's anomaly filter sets, keyed by anomaly iteration.
MiniSetPartition partition_layer(const std::string& layer_id,
                                 const std::map<std::int64_t, ElementSet>& sets_by_iteration);

/// Mini-set id -> number of distinct (class, iteration) event pairs whose
/// iteration's filter set contains the mini-set.
std::vector<int> miniset_appearances(const MiniSetPartition& partition,
                                     const std::vector<AnomalyEvent>& events);

/// Compares the mini-sets of two partitions as a set of sets.
bool same_partition(const MiniSetPartition& a, const MiniSetPartition& b);

/// Canonical form (each mini-set sorted, list sorted) for comparisons.
std::vector<ElementSet> canonical(const MiniSetPartition& p);

}  // namespace trainscope
