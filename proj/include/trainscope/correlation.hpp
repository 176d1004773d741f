#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trainscope/anomaly.hpp"
#include "trainscope/partition.hpp"
#include "trainscope/store.hpp"

namespace trainscope {

struct GridParams {
  int k = 5;
  double min_fraction = 0.5;
  int top_k = 100;
  int min_appearance = 1;
};

struct GridRow {
  int layer_ordinal = 0;
  std::string layer_id;
  /// |s_i|: distinct anomaly filters of the layer over all anomaly iterations.
  int anomaly_filters = 0;
  MiniSetPartition partition;
  std::vector<int> appearances;  // per mini-set
  std::vector<int> lines;        // mini-set ids surviving the min-appearance filter
};

struct GridColumn {
  int class_id = 0;
  std::string name;
  std::vector<std::int64_t> iterations;  // T_j, ascending
  int total_score = 0;
};

struct GridCell {
  int row = 0;
  int col = 0;
  int count = 0;  // |union over t in T_j of s_{i,t}|

  bool operator==(const GridCell&) const = default;
};

struct GridRect {
  int row = 0;
  int miniset = 0;
  int col = 0;
  std::int64_t iteration = 0;
  int height = 0;

  bool operator==(const GridRect&) const = default;
};

/// Layer x class correlation grid. Rows are layers carrying anomaly filters in
/// network order; columns are classes with anomaly events ordered by total
/// anomaly score (descending, ties by class id).
struct CorrelationGrid {
  GridParams params;
  std::vector<GridRow> rows;
  std::vector<GridColumn> cols;
  std::vector<GridCell> cells;  // only non-zero counts
  std::vector<GridRect> rects;
  std::vector<AnomalyEvent> events;
  std::map<std::int64_t, std::vector<AnomalyFilterSet>> filter_sets;

  bool empty() const { return rows.empty() && cols.empty(); }
};

/// Throws InvalidArgument for out-of-range parameters.
CorrelationGrid build_grid(const RunStore& store, const GridParams& params);

struct CellDetail {
  std::string layer_id;
  int class_id = 0;
  int count = 0;
  std::vector<std::int64_t> iterations;
  std::vector<int> minisets;              // ids with at least one rectangle in the cell
  std::vector<GridRect> rects;
  std::map<int, bool> repeated;           // mini-set id -> appears at >= 2 iterations
};

/// Throws NotFound when the layer or the class is not part of the grid.
CellDetail cell_detail(const CorrelationGrid& grid, std::string_view layer_id, int class_id);

nlohmann::json to_json(const CorrelationGrid& grid);
nlohmann::json to_json(const CellDetail& detail);

}  // namespace trainscope
