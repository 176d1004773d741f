#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "trainscope/error.hpp"
#include "trainscope/formats.hpp"
#include "trainscope/model.hpp"

namespace trainscope {

/// Descriptive statistics of a weight set. `sd` is the population standard
/// deviation. Non-finite inputs are excluded and counted in `nonfinite`.
struct WeightStats {
  double mean = 0;
  double sd = 0;
  double sum = 0;
  double min = 0;
  double max = 0;
  std::size_t count = 0;
  std::size_t nonfinite = 0;
};

namespace detail {

/// Two-pass accumulator over any number of blocks. Extended precision keeps
/// aggregation over concatenated layers stable to well below 1e-12.
class TwoPassStats {
 public:
  template <typename Derived>
  void first(const Eigen::DenseBase<Derived>& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      const long double v = static_cast<long double>(block.derived().coeff(i));
      if (!std::isfinite(v)) {
        ++nonfinite_;
        continue;
      }
      sum_ += v;
      ++count_;
      min_ = std::min(min_, v);
      max_ = std::max(max_, v);
    }
  }

  template <typename Derived>
  void second(const Eigen::DenseBase<Derived>& block) {
    const long double mean = count_ ? sum_ / static_cast<long double>(count_) : 0.0L;
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      const long double v = static_cast<long double>(block.derived().coeff(i));
      if (!std::isfinite(v)) continue;
      const long double d = v - mean;
      m2_ += d * d;
    }
  }

  WeightStats result() const {
    WeightStats s;
    s.count = count_;
    s.nonfinite = nonfinite_;
    if (count_ == 0) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      s.mean = s.sd = s.min = s.max = nan;
      s.sum = 0;
      return s;
    }
    const long double n = static_cast<long double>(count_);
    s.sum = static_cast<double>(sum_);
    s.mean = static_cast<double>(sum_ / n);
    s.sd = static_cast<double>(std::sqrt(m2_ / n));
    s.min = static_cast<double>(min_);
    s.max = static_cast<double>(max_);
    return s;
  }

 private:
  long double sum_ = 0;
  long double m2_ = 0;
  long double min_ = std::numeric_limits<long double>::infinity();
  long double max_ = -std::numeric_limits<long double>::infinity();
  std::size_t count_ = 0;
  std::size_t nonfinite_ = 0;
};

}  // namespace detail

/// Throws InvalidArgument on an empty input.
template <typename Derived>
WeightStats weight_stats(const Eigen::DenseBase<Derived>& values) {
  if (values.size() == 0) throw InvalidArgument("weight_stats: empty input");
  detail::TwoPassStats acc;
  acc.first(values);
  acc.second(values);
  return acc.result();
}

/// ||cur - prev||_2 / ||prev||_2, or nullopt when prev has zero norm.
template <typename DerivedA, typename DerivedB>
std::optional<double> update_ratio(const Eigen::DenseBase<DerivedA>& prev,
                                   const Eigen::DenseBase<DerivedB>& cur) {
  if (prev.size() != cur.size()) throw InvalidArgument("update_ratio: length mismatch");
  long double delta2 = 0;
  long double prev2 = 0;
  for (Eigen::Index i = 0; i < prev.size(); ++i) {
    const long double p = static_cast<long double>(prev.derived().coeff(i));
    const long double d = static_cast<long double>(cur.derived().coeff(i)) - p;
    delta2 += d * d;
    prev2 += p * p;
  }
  if (!(prev2 > 0)) return std::nullopt;
  return static_cast<double>(std::sqrt(delta2 / prev2));
}

/// 1 - max(0, cos(prev, cur)). Both zero counts as no change, exactly one zero
/// as a full change.
///
/// Evaluated as min(1, |u - v|^2 / 2) on the unit vectors, which keeps full
/// relative precision for the tiny changes of a healthy training step.
template <typename DerivedA, typename DerivedB>
double filter_change_degree(const Eigen::DenseBase<DerivedA>& prev,
                            const Eigen::DenseBase<DerivedB>& cur) {
  if (prev.size() != cur.size()) throw InvalidArgument("filter_change_degree: length mismatch");
  long double na = 0, nb = 0;
  bool identical = true;
  for (Eigen::Index i = 0; i < prev.size(); ++i) {
    const long double a = static_cast<long double>(prev.derived().coeff(i));
    const long double b = static_cast<long double>(cur.derived().coeff(i));
    identical = identical && (a == b);
    na += a * a;
    nb += b * b;
  }
  if (identical) return 0.0;
  const bool zero_a = na == 0, zero_b = nb == 0;
  if (zero_a && zero_b) return 0.0;
  if (zero_a || zero_b) return 1.0;
  if (!std::isfinite(na) || !std::isfinite(nb)) return 1.0;
  const long double ia = 1.0L / std::sqrt(na), ib = 1.0L / std::sqrt(nb);
  long double d2 = 0;
  for (Eigen::Index i = 0; i < prev.size(); ++i) {
    const long double d = static_cast<long double>(prev.derived().coeff(i)) * ia -
                          static_cast<long double>(cur.derived().coeff(i)) * ib;
    d2 += d * d;
  }
  if (!std::isfinite(d2)) return 1.0;
  return static_cast<double>(std::min(1.0L, d2 / 2.0L));
}

/// Change degree of every filter (row) between two dumps of one layer.
Eigen::VectorXd filter_changes(const FilterWeights& prev, const FilterWeights& cur);

/// Statistics over the concatenation of every layer below `node_id`.
WeightStats aggregate_stats(const NetworkHierarchy& h, std::string_view node_id,
                            const WeightDump& dump);
WeightStats aggregate_stats(const NetworkHierarchy& h, int node_index, const WeightDump& dump);

/// Update ratio over the concatenation of every layer below a node.
std::optional<double> aggregate_update_ratio(const NetworkHierarchy& h, int node_index,
                                             const WeightDump& prev, const WeightDump& cur);

/// One filter's change degree at one dump, as ranked by the top-filter index.
struct RankedFilter {
  int layer_ordinal = 0;  // position of the layer in network order
  int filter = 0;
  double change = 0;

  bool operator==(const RankedFilter&) const = default;
};

/// Descending change; ties by (layer order, filter index).
inline bool ranks_before(const RankedFilter& a, const RankedFilter& b) {
  if (a.change != b.change) return a.change > b.change;
  if (a.layer_ordinal != b.layer_ordinal) return a.layer_ordinal < b.layer_ordinal;
  return a.filter < b.filter;
}

enum class NormalizeMode { None, Filter, Iteration };

std::string_view to_string(NormalizeMode mode);
/// Accepts "none"/"raw", "filter", "iteration". Throws InvalidArgument.
NormalizeMode normalize_mode_from_string(std::string_view name);

/// Min-max normalization per row (Filter) or per column (Iteration). A constant
/// row/column maps to zeros.
Eigen::MatrixXd normalize_changes(const Eigen::MatrixXd& changes, NormalizeMode mode);

/// Fraction of the class's images misclassified at each dump.
Eigen::VectorXd class_error_series(const ValidationMatrix& vm, int class_id);
/// One row per class, one column per dump.
Eigen::MatrixXd class_error_matrix(const ValidationMatrix& vm);

struct BoxplotSummary {
  double min = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  double max = 0;
};

/// Linear-interpolation quantile at position p * (n - 1) of sorted data.
double sorted_quantile(const std::vector<double>& sorted, double p);

/// Quartiles by linear interpolation between order statistics (inclusive).
template <typename Derived>
BoxplotSummary boxplot_summary(const Eigen::DenseBase<Derived>& values) {
  if (values.size() == 0) throw InvalidArgument("boxplot_summary: empty input");
  std::vector<double> v(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i)
    v[static_cast<std::size_t>(i)] = static_cast<double>(values.derived().coeff(i));
  std::sort(v.begin(), v.end());
  return {v.front(), sorted_quantile(v, 0.25), sorted_quantile(v, 0.5), sorted_quantile(v, 0.75),
          v.back()};
}

}  // namespace trainscope
