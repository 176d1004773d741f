#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "trainscope/anomaly.hpp"
#include "trainscope/formats.hpp"
#include "trainscope/model.hpp"
#include "trainscope/stats.hpp"

namespace trainscope {

enum class Measure { Mean, Sd, Sum, Min, Max, UpdateRatio };

std::string_view to_string(Measure m);
/// Throws InvalidArgument for an unknown name.
Measure measure_from_string(std::string_view name);

/// One row of the layer-stat index: statistics of a node's weights at a dump.
/// update_ratio is NaN where undefined (first dump, zero previous norm).
struct NodeStatRow {
  double mean = 0;
  double sd = 0;
  double sum = 0;
  double min = 0;
  double max = 0;
  double update_ratio = 0;
  std::uint64_t count = 0;
  std::uint64_t nonfinite = 0;

  double get(Measure m) const;
};

struct StoreGap {
  std::int64_t iteration = 0;
  std::string reason;

  bool operator==(const StoreGap&) const = default;
};

struct ClassStat {
  int class_id = 0;
  int class_size = 0;
  int window = 0;
  Eigen::VectorXd error;
  Eigen::VectorXi left_score;
  Eigen::VectorXi right_score;
  std::vector<AnomalyEvent> events;
};

struct ClassImage {
  ImageMeta meta;
  std::vector<std::uint8_t> sequence;
  std::vector<std::int32_t> labels;  // empty when no dump carried labels
};

struct StoreOptions {
  bool retain_raw = true;
  int anomaly_window = 5;
};

inline constexpr std::uint32_t kStoreFormatVersion = 1;

/// Sealed, read-only run store serving the five query indexes:
///
///   layer-stat   (query_layer_stat)     statistic series per hierarchy node
///   layer-filter (query_layer_filters)  change-degree matrix per layer
///   iter-filter  (query_top_filters)    global change ranking per dump
///   class-stat   (query_class_stat)     error rate and rule scores per class
///   class-image  (query_class_images)   per-image correctness rows per class
///
/// All queries throw std::logic_error on an unsealed store.
class RunStore {
 public:
  /// Loads a sealed store directory and verifies its checksum.
  static RunStore open(const std::filesystem::path& dir);

  bool sealed() const { return sealed_; }
  const RunManifest& manifest() const { return manifest_; }
  const NetworkHierarchy& hierarchy() const { return hierarchy_; }
  /// Dumped iterations actually ingested.
  std::span<const std::int64_t> iterations() const { return manifest_.dump_iterations; }
  int dump_count() const { return static_cast<int>(manifest_.dump_iterations.size()); }
  const std::vector<StoreGap>& gaps() const { return gaps_; }
  int stored_window() const { return window_; }
  bool raw_retained() const { return raw_retained_; }
  std::uint64_t nonfinite_weights() const { return nonfinite_; }
  std::uint64_t checksum() const { return checksum_; }
  const std::filesystem::path& directory() const { return dir_; }

  /// Dump index of a dumped iteration; throws NotFound.
  int dump_index(std::int64_t iteration) const;

  Eigen::VectorXd query_layer_stat(std::string_view node_id, Measure measure) const;
  const NodeStatRow& layer_stat_row(int node_index, int dump) const;

  /// filter_count x (dump_count - 1).
  Eigen::MatrixXd query_layer_filters(std::string_view layer_id,
                                      NormalizeMode mode = NormalizeMode::None) const;

  /// Top-k filters over all layers by raw change degree at `iteration`.
  /// Throws InvalidArgument for the first dump or k < 1, NotFound for an
  /// iteration that was not dumped.
  std::vector<RankedFilter> query_top_filters(std::int64_t iteration, int k) const;

  /// Error series, rule scores and events for window k; uses the stored
  /// scores when k equals the ingest-time window.
  ClassStat query_class_stat(int class_id, int k, double min_fraction) const;
  ClassStat query_class_stat(int class_id) const { return query_class_stat(class_id, window_, 0.5); }

  /// Images of a class in ascending id order.
  std::vector<ClassImage> query_class_images(int class_id) const;

  const ValidationMatrix& validation() const;
  Eigen::MatrixXd class_error_matrix() const;

  /// Location of the retained raw weight dump, if any.
  std::optional<std::filesystem::path> raw_weight_dump(std::int64_t iteration) const;

 private:
  friend class StoreWriter;
  void require_sealed() const;

  std::filesystem::path dir_;
  bool sealed_ = false;
  RunManifest manifest_;
  NetworkHierarchy hierarchy_;
  std::vector<StoreGap> gaps_;
  int window_ = 5;
  bool raw_retained_ = true;
  std::uint64_t nonfinite_ = 0;
  std::uint64_t checksum_ = 0;

  // layer-stat: node-major, dump-minor
  std::vector<NodeStatRow> node_stats_;
  // layer-filter: one matrix per layer in network order
  std::vector<Eigen::MatrixXd> changes_;
  // iter-filter: full ranking per change column
  std::vector<std::vector<RankedFilter>> rankings_;
  // class-stat
  Eigen::MatrixXi class_wrong_;
  Eigen::MatrixXi class_left_;
  Eigen::MatrixXi class_right_;
  // class-image
  ValidationMatrix validation_;
};

/// Single-writer builder. Dumps are appended in iteration order; seal() writes
/// every segment, then meta.json, and returns the sealed in-memory store.
class StoreWriter {
 public:
  StoreWriter(std::filesystem::path dir, RunManifest manifest, StoreOptions options = {});

  void add_dump(std::int64_t iteration, WeightDump weights, const ValidationDump& validation);
  void record_gap(std::int64_t iteration, std::string reason);

  /// Queries on this view throw until seal().
  const RunStore& pending() const { return store_; }
  int dumps_added() const { return static_cast<int>(iterations_.size()); }

  RunStore seal();

 private:
  std::filesystem::path dir_;
  RunManifest source_manifest_;
  StoreOptions options_;
  RunStore store_;
  std::vector<std::int64_t> iterations_;
  std::optional<WeightDump> previous_;
  std::vector<std::vector<NodeStatRow>> stats_by_dump_;
  std::vector<std::vector<Eigen::VectorXd>> changes_by_column_;
  std::vector<std::vector<std::uint8_t>> correct_by_dump_;
  std::vector<std::vector<std::int32_t>> labels_by_dump_;
};

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace trainscope
