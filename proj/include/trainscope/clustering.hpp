#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace trainscope {

struct ClassClustering {
  int k = 0;
  /// Row (class) -> cluster id.
  std::vector<int> assignments;
  /// k x dumps; rows are the final centroids.
  Eigen::MatrixXd centroids;
  /// k x dumps; elementwise mean of each cluster's member series.
  Eigen::MatrixXd mean_series;
  std::vector<std::vector<int>> members;
  int iterations = 0;
  /// Within-cluster sum of squares after every Lloyd update.
  std::vector<double> objective_trace;
};

inline constexpr int kMaxLloydIterations = 100;

/// Lloyd's k-means over the rows of `series` (one row per class, in class-id
/// order) with squared Euclidean distance and seeded farthest-first
/// initialization. Throws InvalidArgument unless 1 <= k <= rows.
ClassClustering kmeans_classes(const Eigen::MatrixXd& series, int k, std::uint64_t seed);

/// Throws NotFound for an unknown or empty cluster.
Eigen::VectorXd cluster_mean_series(const ClassClustering& clustering, int cluster_id);

double within_cluster_ss(const Eigen::MatrixXd& series, const Eigen::MatrixXd& centroids,
                         const std::vector<int>& assignments);

}  // namespace trainscope
