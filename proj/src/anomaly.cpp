#include "trainscope/anomaly.hpp"

#include <algorithm>
#include <set>

#include "trainscope/error.hpp"

namespace trainscope {

namespace {
void check_window(int k) {
  if (k < 1) throw InvalidArgument("anomaly window k must be >= 1 (got " + std::to_string(k) + ")");
}

bool constant_run(std::span<const std::uint8_t> seq, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin + 1; i < end; ++i)
    if (seq[i] != seq[begin]) return false;
  return true;
}
}  // namespace

bool left_rule_fires(std::span<const std::uint8_t> seq, std::size_t j, int k) {
  const auto w = static_cast<std::size_t>(k);
  if (j < w || j >= seq.size()) return false;
  return seq[j] != seq[j - 1] && constant_run(seq, j - w, j);
}

bool right_rule_fires(std::span<const std::uint8_t> seq, std::size_t j, int k) {
  const auto w = static_cast<std::size_t>(k);
  if (j < 1 || j + w > seq.size()) return false;
  return seq[j] != seq[j - 1] && constant_run(seq, j, j + w);
}

FlagSequence left_flags(std::span<const std::uint8_t> seq, int k) {
  check_window(k);
  FlagSequence flags(seq.size(), 0);
  for (std::size_t j = 0; j < seq.size(); ++j) flags[j] = left_rule_fires(seq, j, k) ? 1 : 0;
  return flags;
}

FlagSequence right_flags(std::span<const std::uint8_t> seq, int k) {
  check_window(k);
  FlagSequence flags(seq.size(), 0);
  for (std::size_t j = 0; j < seq.size(); ++j) flags[j] = right_rule_fires(seq, j, k) ? 1 : 0;
  return flags;
}

ClassScores class_anomaly_scores(const ValidationMatrix& vm, int class_id, int k) {
  check_window(k);
  const auto& members = vm.class_images(class_id);
  ClassScores scores{Eigen::VectorXi::Zero(vm.dump_count()), Eigen::VectorXi::Zero(vm.dump_count())};
  for (int img : members) {
    auto seq = vm.sequence(img);
    for (std::size_t j = 1; j < seq.size(); ++j) {
      if (seq[j] == seq[j - 1]) continue;
      const auto idx = static_cast<Eigen::Index>(j);
      if (left_rule_fires(seq, j, k)) ++scores.left[idx];
      if (right_rule_fires(seq, j, k)) ++scores.right[idx];
    }
  }
  return scores;
}

std::string_view to_string(RuleKind kind) { return kind == RuleKind::Left ? "left" : "right"; }

void to_json(nlohmann::json& j, const AnomalyEvent& e) {
  j = nlohmann::json{{"class_id", e.class_id},       {"iteration", e.iteration},
                     {"dump_index", e.dump_index},   {"kind", to_string(e.kind)},
                     {"score", e.score},             {"score_fraction", e.score_fraction}};
}

namespace {
void check_fraction(double min_fraction) {
  if (!(min_fraction > 0.0 && min_fraction <= 1.0))
    throw InvalidArgument("min_fraction must lie in (0, 1]");
}
}  // namespace

std::vector<AnomalyEvent> class_events(int class_id, int class_size, const ClassScores& scores,
                                       std::span<const std::int64_t> iterations, double min_fraction) {
  check_fraction(min_fraction);
  if (static_cast<Eigen::Index>(iterations.size()) != scores.left.size())
    throw InvalidArgument("iteration list does not match dump count");
  const auto m = static_cast<double>(class_size);
  std::vector<AnomalyEvent> events;
  for (Eigen::Index j = 0; j < scores.left.size(); ++j) {
    for (auto kind : {RuleKind::Left, RuleKind::Right}) {
      const int score = kind == RuleKind::Left ? scores.left[j] : scores.right[j];
      const double fraction = score / m;
      if (score > 0 && fraction >= min_fraction)
        events.push_back({class_id, iterations[static_cast<std::size_t>(j)], static_cast<int>(j), kind,
                          score, fraction});
    }
  }
  return events;
}

std::vector<AnomalyEvent> detect_anomalies(const ValidationMatrix& vm,
                                           std::span<const std::int64_t> iterations, int k,
                                           double min_fraction) {
  check_fraction(min_fraction);
  std::vector<AnomalyEvent> events;
  for (int c = 0; c < vm.class_count(); ++c) {
    auto ce = class_events(c, static_cast<int>(vm.class_images(c).size()), class_anomaly_scores(vm, c, k),
                           iterations, min_fraction);
    events.insert(events.end(), ce.begin(), ce.end());
  }
  return events;
}

std::map<std::int64_t, std::vector<AnomalyFilterSet>> anomaly_filters(
    const std::vector<AnomalyEvent>& events, int top_k, const TopFilterQuery& top_filters,
    const NetworkHierarchy& network) {
  if (top_k < 1) throw InvalidArgument("top_k must be >= 1");
  std::set<std::int64_t> anomaly_iterations;
  for (const auto& e : events) anomaly_iterations.insert(e.iteration);

  std::map<std::int64_t, std::vector<AnomalyFilterSet>> result;
  for (std::int64_t t : anomaly_iterations) {
    std::map<int, std::vector<int>> by_layer;
    for (const auto& rf : top_filters(t, top_k)) by_layer[rf.layer_ordinal].push_back(rf.filter);
    auto& sets = result[t];
    for (auto& [ordinal, filters] : by_layer) {
      std::sort(filters.begin(), filters.end());
      const auto& leaf = network.node(network.leaves().at(static_cast<std::size_t>(ordinal)));
      sets.push_back({t, ordinal, leaf.id, std::move(filters)});
    }
  }
  return result;
}

}  // namespace trainscope
