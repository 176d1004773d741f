#include "trainscope/partition.hpp"

#include <algorithm>
#include <iterator>
#include <set>

namespace trainscope {

namespace {

ElementSet normalized(ElementSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

ElementSet intersect(const ElementSet& a, const ElementSet& b) {
  ElementSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

ElementSet subtract(const ElementSet& a, const ElementSet& b) {
  ElementSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// A mini-set is either inside a target or disjoint from it, so probing one
// element decides membership.
std::vector<int> composing_minisets(const std::vector<ElementSet>& minisets, const ElementSet& target) {
  std::vector<int> ids;
  for (std::size_t m = 0; m < minisets.size(); ++m)
    if (std::binary_search(target.begin(), target.end(), minisets[m].front()))
      ids.push_back(static_cast<int>(m));
  return ids;
}

}  // namespace

MiniSetPartition min_set_partition(const std::vector<ElementSet>& targets) {
  std::vector<ElementSet> result;
  for (const auto& raw_target : targets) {
    ElementSet target = normalized(raw_target);
    std::vector<ElementSet> next;
    next.reserve(result.size() * 2 + 1);
    for (const auto& mini : result) {
      next.push_back(intersect(target, mini));
      next.push_back(subtract(mini, target));
      target = subtract(target, mini);
    }
    if (!target.empty()) next.push_back(std::move(target));
    std::erase_if(next, [](const ElementSet& s) { return s.empty(); });
    result = std::move(next);
  }

  MiniSetPartition p;
  p.minisets = std::move(result);
  for (std::size_t t = 0; t < targets.size(); ++t)
    p.membership[static_cast<std::int64_t>(t)] = composing_minisets(p.minisets, normalized(targets[t]));
  return p;
}

MiniSetPartition signature_partition(const std::vector<ElementSet>& targets) {
  std::vector<ElementSet> sorted_targets;
  sorted_targets.reserve(targets.size());
  for (const auto& t : targets) sorted_targets.push_back(normalized(t));

  std::set<int> universe;
  for (const auto& t : sorted_targets) universe.insert(t.begin(), t.end());

  std::map<std::vector<bool>, ElementSet> groups;
  std::vector<std::vector<bool>> order;
  for (int e : universe) {
    std::vector<bool> sig(sorted_targets.size());
    for (std::size_t t = 0; t < sorted_targets.size(); ++t)
      sig[t] = std::binary_search(sorted_targets[t].begin(), sorted_targets[t].end(), e);
    auto [it, inserted] = groups.try_emplace(sig);
    if (inserted) order.push_back(sig);
    it->second.push_back(e);
  }

  MiniSetPartition p;
  for (const auto& sig : order) p.minisets.push_back(groups[sig]);
  for (std::size_t t = 0; t < sorted_targets.size(); ++t)
    p.membership[static_cast<std::int64_t>(t)] = composing_minisets(p.minisets, sorted_targets[t]);
  return p;
}

MiniSetPartition partition_layer(const std::string& layer_id,
                                 const std::map<std::int64_t, ElementSet>& sets_by_iteration) {
  std::vector<ElementSet> targets;
  std::vector<std::int64_t> keys;
  for (const auto& [iteration, set] : sets_by_iteration) {
    keys.push_back(iteration);
    targets.push_back(set);
  }
  auto indexed = min_set_partition(targets);
  MiniSetPartition p;
  p.layer_id = layer_id;
  p.minisets = std::move(indexed.minisets);
  for (std::size_t t = 0; t < keys.size(); ++t)
    p.membership[keys[t]] = std::move(indexed.membership[static_cast<std::int64_t>(t)]);
  return p;
}

std::vector<int> miniset_appearances(const MiniSetPartition& partition,
                                     const std::vector<AnomalyEvent>& events) {
  std::set<std::pair<int, std::int64_t>> pairs;
  for (const auto& e : events) pairs.emplace(e.class_id, e.iteration);

  std::vector<int> counts(partition.minisets.size(), 0);
  for (const auto& [cls, iteration] : pairs) {
    auto it = partition.membership.find(iteration);
    if (it == partition.membership.end()) continue;
    for (int id : it->second) ++counts[static_cast<std::size_t>(id)];
  }
  return counts;
}

std::vector<ElementSet> canonical(const MiniSetPartition& p) {
  std::vector<ElementSet> sets;
  sets.reserve(p.minisets.size());
  for (const auto& s : p.minisets) sets.push_back(normalized(s));
  std::sort(sets.begin(), sets.end());
  return sets;
}

bool same_partition(const MiniSetPartition& a, const MiniSetPartition& b) {
  return canonical(a) == canonical(b);
}

}  // namespace trainscope
