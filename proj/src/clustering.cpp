#include "trainscope/clustering.hpp"

#include <limits>
#include <random>
#include <string>

#include "trainscope/error.hpp"

namespace trainscope {

namespace {

std::vector<int> assign(const Eigen::MatrixXd& series, const Eigen::MatrixXd& centroids) {
  std::vector<int> out(static_cast<std::size_t>(series.rows()));
  for (Eigen::Index i = 0; i < series.rows(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - series.row(i)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

Eigen::MatrixXd farthest_first(const Eigen::MatrixXd& series, int k, std::uint64_t seed) {
  const Eigen::Index n = series.rows();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

  Eigen::MatrixXd centroids(k, series.cols());
  centroids.row(0) = series.row(pick(rng));
  Eigen::VectorXd nearest = (series.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    centroids.row(c) = series.row(far);
    nearest = nearest.cwiseMin((series.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

// Recomputes centroids; an empty cluster takes over the point lying farthest
// from its own centroid.
void update(const Eigen::MatrixXd& series, std::vector<int>& assignments, Eigen::MatrixXd& centroids) {
  const int k = static_cast<int>(centroids.rows());
  for (;;) {
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int a : assignments) ++sizes[static_cast<std::size_t>(a)];
    int empty = -1;
    for (int c = 0; c < k && empty < 0; ++c)
      if (sizes[static_cast<std::size_t>(c)] == 0) empty = c;
    if (empty < 0) break;

    Eigen::Index far = -1;
    double far_dist = -1;
    for (Eigen::Index i = 0; i < series.rows(); ++i) {
      const int a = assignments[static_cast<std::size_t>(i)];
      if (sizes[static_cast<std::size_t>(a)] < 2) continue;
      const double d = (series.row(i) - centroids.row(a)).squaredNorm();
      if (d > far_dist) {
        far_dist = d;
        far = i;
      }
    }
    assignments[static_cast<std::size_t>(far)] = empty;
    centroids.row(empty) = series.row(far);
  }

  centroids.setZero();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < series.rows(); ++i) {
    const int a = assignments[static_cast<std::size_t>(i)];
    centroids.row(a) += series.row(i);
    counts[a] += 1;
  }
  for (int c = 0; c < k; ++c) centroids.row(c) /= counts[c];
}

}  // namespace

double within_cluster_ss(const Eigen::MatrixXd& series, const Eigen::MatrixXd& centroids,
                         const std::vector<int>& assignments) {
  double total = 0;
  for (Eigen::Index i = 0; i < series.rows(); ++i)
    total += (series.row(i) - centroids.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

ClassClustering kmeans_classes(const Eigen::MatrixXd& series, int k, std::uint64_t seed) {
  if (k < 1 || k > series.rows())
    throw InvalidArgument("cluster count k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(series.rows()) + "]");

  ClassClustering out;
  out.k = k;
  out.centroids = farthest_first(series, k, seed);
  out.assignments = assign(series, out.centroids);

  for (int it = 0; it < kMaxLloydIterations; ++it) {
    update(series, out.assignments, out.centroids);
    out.objective_trace.push_back(within_cluster_ss(series, out.centroids, out.assignments));
    ++out.iterations;
    auto next = assign(series, out.centroids);
    if (next == out.assignments) break;
    out.assignments = std::move(next);
  }

  out.members.assign(static_cast<std::size_t>(k), {});
  out.mean_series = Eigen::MatrixXd::Zero(k, series.cols());
  for (Eigen::Index i = 0; i < series.rows(); ++i) {
    const int a = out.assignments[static_cast<std::size_t>(i)];
    out.members[static_cast<std::size_t>(a)].push_back(static_cast<int>(i));
    out.mean_series.row(a) += series.row(i);
  }
  for (int c = 0; c < k; ++c) {
    const auto size = out.members[static_cast<std::size_t>(c)].size();
    if (size) out.mean_series.row(c) /= static_cast<double>(size);
  }
  return out;
}

Eigen::VectorXd cluster_mean_series(const ClassClustering& clustering, int cluster_id) {
  if (cluster_id < 0 || cluster_id >= clustering.k ||
      clustering.members[static_cast<std::size_t>(cluster_id)].empty())
    throw NotFound("unknown or empty cluster " + std::to_string(cluster_id));
  return clustering.mean_series.row(cluster_id).transpose();
}

}  // namespace trainscope
