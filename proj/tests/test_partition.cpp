#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "support.hpp"
#include "trainscope/partition.hpp"

using namespace trainscope;

namespace {

enum : int { A, B, C, D };

std::vector<ElementSet> sorted_sets(std::vector<ElementSet> v) {
  for (auto& s : v) std::sort(s.begin(), s.end());
  std::sort(v.begin(), v.end());
  return v;
}

void check_invariants(const std::vector<ElementSet>& targets, const MiniSetPartition& p) {
  std::set<int> seen;
  for (const auto& m : p.minisets) {
    REQUIRE_FALSE(m.empty());
    for (int e : m) REQUIRE(seen.insert(e).second);  // pairwise disjoint
  }
  std::set<int> all;
  for (const auto& t : targets) all.insert(t.begin(), t.end());
  REQUIRE(seen == all);  // union cover

  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::set<int> rebuilt;
    const auto it = p.membership.find(static_cast<std::int64_t>(t));
    if (it != p.membership.end())
      for (int id : it->second) rebuilt.insert(p.minisets[static_cast<std::size_t>(id)].begin(), p.minisets[static_cast<std::size_t>(id)].end());
    REQUIRE(rebuilt == std::set<int>(targets[t].begin(), targets[t].end()));
  }
  const std::size_t signatures = (std::size_t{1} << targets.size()) - 1;
  REQUIRE(p.minisets.size() <= std::min(signatures, all.size()));
}

}  // namespace

TEST_CASE("partition examples") {
  const std::vector<ElementSet> two{{A, B, C}, {B, C, D}};
  CHECK(canonical(min_set_partition(two)) == sorted_sets({{A}, {B, C}, {D}}));
  CHECK(canonical(signature_partition(two)) == sorted_sets({{A}, {B, C}, {D}}));

  CHECK(canonical(min_set_partition({{A, B}})) == sorted_sets({{A, B}}));

  const std::vector<ElementSet> three{{A, B}, {B, C}, {A, C}};
  CHECK(canonical(min_set_partition(three)) == sorted_sets({{A}, {B}, {C}}));

  CHECK(min_set_partition({}).minisets.empty());
}

TEST_CASE("signature partition examples") {
  CHECK(canonical(signature_partition({{A, B}, {C}, {D}})) == sorted_sets({{A, B}, {C}, {D}}));
  CHECK(canonical(signature_partition({{A, B, C}, {A, B, C}, {A, B, C}})) == sorted_sets({{A, B, C}}));
}

TEST_CASE("min set partition ids follow creation order") {
  const auto p = min_set_partition({{A, B, C}, {B, C, D}});
  REQUIRE(p.minisets.size() == 3);
  // {A,B,C} is split into {B,C} (intersection) and {A}; {D} is the leftover.
  CHECK(p.minisets[0] == ElementSet{B, C});
  CHECK(p.minisets[1] == ElementSet{A});
  CHECK(p.minisets[2] == ElementSet{D});
  CHECK(p.membership.at(0) == std::vector<int>{0, 1});
  CHECK(p.membership.at(1) == std::vector<int>{0, 2});
}

TEST_CASE("randomized equivalence with the signature oracle") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto targets = testsupport::random_targets(rng, 10, 50);
    const auto p = min_set_partition(targets);
    REQUIRE(same_partition(p, signature_partition(targets)));
    check_invariants(targets, p);

    auto shuffled = targets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    REQUIRE(canonical(min_set_partition(shuffled)) == canonical(p));
  }
}

TEST_CASE("layer partition keys membership by iteration") {
  const auto p = partition_layer("conv", {{1600, {1, 2, 3}}, {4800, {2, 3, 9}}});
  CHECK(p.layer_id == "conv");
  CHECK(p.membership.count(1600) == 1);
  CHECK(p.membership.count(4800) == 1);
  CHECK(canonical(p) == sorted_sets({{1}, {2, 3}, {9}}));
}

TEST_CASE("mini-set appearances count (class, iteration) pairs") {
  const auto p = partition_layer("conv", {{1600, {1, 2, 3}}, {4800, {2, 3, 9}}});
  std::vector<AnomalyEvent> events{
      {0, 1600, 1, RuleKind::Left, 5, 0.5},  {0, 1600, 1, RuleKind::Right, 5, 0.5},
      {1, 1600, 1, RuleKind::Left, 5, 0.5},  {1, 4800, 3, RuleKind::Left, 5, 0.5},
      {2, 4800, 3, RuleKind::Right, 5, 0.5}, {2, 9600, 6, RuleKind::Right, 5, 0.5}};
  const auto counts = miniset_appearances(p, events);
  for (std::size_t m = 0; m < p.minisets.size(); ++m) {
    const auto& set = p.minisets[m];
    if (set == ElementSet{2, 3}) CHECK(counts[m] == 4);  // shared by both iterations
    if (set == ElementSet{1}) CHECK(counts[m] == 2);
    if (set == ElementSet{9}) CHECK(counts[m] == 2);
    CHECK(counts[m] >= 1);
  }
}
