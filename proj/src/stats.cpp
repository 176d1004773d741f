#include "trainscope/stats.hpp"

namespace trainscope {

Eigen::VectorXd filter_changes(const FilterWeights& prev, const FilterWeights& cur) {
  if (prev.rows() != cur.rows() || prev.cols() != cur.cols())
    throw InvalidArgument("filter_changes: shape mismatch");
  Eigen::VectorXd out(prev.rows());
  for (Eigen::Index f = 0; f < prev.rows(); ++f) out[f] = filter_change_degree(prev.row(f), cur.row(f));
  return out;
}

WeightStats aggregate_stats(const NetworkHierarchy& h, int node_index, const WeightDump& dump) {
  const auto leaves = h.leaves_under(node_index);
  std::vector<const FilterWeights*> blocks;
  blocks.reserve(leaves.size());
  for (int leaf : leaves) blocks.push_back(&dump.layer(h.node(leaf).id).filters);
  std::size_t total = 0;
  for (const auto* b : blocks) total += static_cast<std::size_t>(b->size());
  if (total == 0) throw InvalidArgument("aggregate_stats: node '" + h.node(node_index).id + "' has no weights");

  detail::TwoPassStats acc;
  for (const auto* b : blocks) acc.first(*b);
  for (const auto* b : blocks) acc.second(*b);
  return acc.result();
}

WeightStats aggregate_stats(const NetworkHierarchy& h, std::string_view node_id, const WeightDump& dump) {
  return aggregate_stats(h, h.index_of(node_id), dump);
}

std::optional<double> aggregate_update_ratio(const NetworkHierarchy& h, int node_index,
                                             const WeightDump& prev, const WeightDump& cur) {
  long double delta2 = 0;
  long double prev2 = 0;
  for (int leaf : h.leaves_under(node_index)) {
    const auto& id = h.node(leaf).id;
    const auto& p = prev.layer(id).filters;
    const auto& c = cur.layer(id).filters;
    if (p.size() != c.size()) throw InvalidArgument("aggregate_update_ratio: shape mismatch");
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const long double pv = p.data()[i];
      const long double d = static_cast<long double>(c.data()[i]) - pv;
      delta2 += d * d;
      prev2 += pv * pv;
    }
  }
  if (!(prev2 > 0)) return std::nullopt;
  return static_cast<double>(std::sqrt(delta2 / prev2));
}

std::string_view to_string(NormalizeMode mode) {
  switch (mode) {
    case NormalizeMode::None: return "none";
    case NormalizeMode::Filter: return "filter";
    case NormalizeMode::Iteration: return "iteration";
  }
  return "none";
}

NormalizeMode normalize_mode_from_string(std::string_view name) {
  if (name == "none" || name == "raw") return NormalizeMode::None;
  if (name == "filter") return NormalizeMode::Filter;
  if (name == "iteration") return NormalizeMode::Iteration;
  throw InvalidArgument("unknown normalize mode '" + std::string(name) + "'");
}

namespace {
template <typename Vec>
void min_max_in_place(Vec&& v) {
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  if (!(hi > lo)) {
    v.setZero();
    return;
  }
  v = (v.array() - lo) / (hi - lo);
}
}  // namespace

Eigen::MatrixXd normalize_changes(const Eigen::MatrixXd& changes, NormalizeMode mode) {
  Eigen::MatrixXd out = changes;
  if (out.size() == 0) return out;
  switch (mode) {
    case NormalizeMode::None:
      break;
    case NormalizeMode::Filter:
      for (Eigen::Index r = 0; r < out.rows(); ++r) min_max_in_place(out.row(r));
      break;
    case NormalizeMode::Iteration:
      for (Eigen::Index c = 0; c < out.cols(); ++c) min_max_in_place(out.col(c));
      break;
  }
  return out;
}

Eigen::VectorXd class_error_series(const ValidationMatrix& vm, int class_id) {
  const auto& members = vm.class_images(class_id);
  Eigen::VectorXd wrong = Eigen::VectorXd::Zero(vm.dump_count());
  for (int img : members) {
    auto seq = vm.sequence(img);
    for (std::size_t j = 0; j < seq.size(); ++j)
      if (!seq[j]) wrong[static_cast<Eigen::Index>(j)] += 1.0;
  }
  return wrong / static_cast<double>(members.size());
}

Eigen::MatrixXd class_error_matrix(const ValidationMatrix& vm) {
  Eigen::MatrixXd m(vm.class_count(), vm.dump_count());
  for (int c = 0; c < vm.class_count(); ++c) m.row(c) = class_error_series(vm, c).transpose();
  return m;
}

double sorted_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InvalidArgument("sorted_quantile: empty input");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace trainscope
