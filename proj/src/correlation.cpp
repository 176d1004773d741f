#include "trainscope/correlation.hpp"

#include <algorithm>
#include <set>

#include "trainscope/error.hpp"

namespace trainscope {

using nlohmann::json;

CorrelationGrid build_grid(const RunStore& store, const GridParams& params) {
  if (params.top_k < 1) throw InvalidArgument("top_k must be >= 1");
  if (params.min_appearance < 1) throw InvalidArgument("min_appearance must be >= 1");

  CorrelationGrid grid;
  grid.params = params;
  grid.events = detect_anomalies(store.validation(), store.iterations(), params.k, params.min_fraction);
  if (grid.events.empty()) return grid;

  const auto& h = store.hierarchy();
  grid.filter_sets = anomaly_filters(
      grid.events, params.top_k,
      [&store](std::int64_t t, int k) { return store.query_top_filters(t, k); }, h);

  // Columns.
  std::map<int, GridColumn> by_class;
  for (const auto& e : grid.events) {
    auto& col = by_class[e.class_id];
    col.class_id = e.class_id;
    col.total_score += e.score;
    col.iterations.push_back(e.iteration);
  }
  for (auto& [cls, col] : by_class) {
    std::sort(col.iterations.begin(), col.iterations.end());
    col.iterations.erase(std::unique(col.iterations.begin(), col.iterations.end()), col.iterations.end());
    col.name = store.manifest().classes.at(static_cast<std::size_t>(cls)).name;
    grid.cols.push_back(std::move(col));
  }
  std::stable_sort(grid.cols.begin(), grid.cols.end(), [](const GridColumn& a, const GridColumn& b) {
    if (a.total_score != b.total_score) return a.total_score > b.total_score;
    return a.class_id < b.class_id;
  });

  // Per-layer anomaly filter sets s_{i,t}.
  std::map<int, std::map<std::int64_t, ElementSet>> by_layer;
  for (const auto& [t, sets] : grid.filter_sets)
    for (const auto& s : sets) by_layer[s.layer_ordinal][t] = s.filters;

  for (const auto& [ordinal, sets] : by_layer) {
    GridRow row;
    row.layer_ordinal = ordinal;
    row.layer_id = h.node(h.leaves().at(static_cast<std::size_t>(ordinal))).id;
    std::set<int> all;
    for (const auto& [t, s] : sets) all.insert(s.begin(), s.end());
    row.anomaly_filters = static_cast<int>(all.size());
    row.partition = partition_layer(row.layer_id, sets);
    row.appearances = miniset_appearances(row.partition, grid.events);
    for (std::size_t m = 0; m < row.appearances.size(); ++m)
      if (row.appearances[m] >= params.min_appearance) row.lines.push_back(static_cast<int>(m));

    const int r = static_cast<int>(grid.rows.size());
    for (std::size_t c = 0; c < grid.cols.size(); ++c) {
      std::set<int> cell;
      for (std::int64_t t : grid.cols[c].iterations) {
        auto it = sets.find(t);
        if (it != sets.end()) cell.insert(it->second.begin(), it->second.end());
      }
      if (!cell.empty()) grid.cells.push_back({r, static_cast<int>(c), static_cast<int>(cell.size())});

      for (int m : row.lines) {
        for (std::int64_t t : grid.cols[c].iterations) {
          auto mem = row.partition.membership.find(t);
          if (mem == row.partition.membership.end()) continue;
          if (std::binary_search(mem->second.begin(), mem->second.end(), m))
            grid.rects.push_back({r, m, static_cast<int>(c), t,
                                  static_cast<int>(row.partition.minisets[static_cast<std::size_t>(m)].size())});
        }
      }
    }
    grid.rows.push_back(std::move(row));
  }
  return grid;
}

CellDetail cell_detail(const CorrelationGrid& grid, std::string_view layer_id, int class_id) {
  auto row_it = std::find_if(grid.rows.begin(), grid.rows.end(),
                             [&](const GridRow& r) { return r.layer_id == layer_id; });
  auto col_it = std::find_if(grid.cols.begin(), grid.cols.end(),
                             [&](const GridColumn& c) { return c.class_id == class_id; });
  if (row_it == grid.rows.end() || col_it == grid.cols.end())
    throw NotFound("no grid cell for layer '" + std::string(layer_id) + "' and class " +
                   std::to_string(class_id));
  const int r = static_cast<int>(row_it - grid.rows.begin());
  const int c = static_cast<int>(col_it - grid.cols.begin());

  CellDetail d;
  d.layer_id = row_it->layer_id;
  d.class_id = class_id;
  d.iterations = col_it->iterations;
  for (const auto& cell : grid.cells)
    if (cell.row == r && cell.col == c) d.count = cell.count;
  std::map<int, int> seen;
  for (const auto& rect : grid.rects) {
    if (rect.row != r || rect.col != c) continue;
    d.rects.push_back(rect);
    ++seen[rect.miniset];
  }
  for (const auto& [m, n] : seen) {
    d.minisets.push_back(m);
    d.repeated[m] = n >= 2;
  }
  return d;
}

namespace {
json rect_json(const GridRect& r) {
  return {{"row", r.row}, {"miniset", r.miniset}, {"col", r.col}, {"iter", r.iteration}, {"height", r.height}};
}
}  // namespace

json to_json(const CorrelationGrid& grid) {
  json rows = json::array();
  json lines = json::array();
  for (std::size_t r = 0; r < grid.rows.size(); ++r) {
    const auto& row = grid.rows[r];
    rows.push_back({{"layer", row.layer_id},
                    {"layer_index", row.layer_ordinal},
                    {"anomaly_filters", row.anomaly_filters},
                    {"minisets", row.partition.minisets.size()}});
    for (int m : row.lines) {
      const auto& set = row.partition.minisets[static_cast<std::size_t>(m)];
      lines.push_back({{"kind", "horizontal"},
                       {"row", r},
                       {"miniset", m},
                       {"height", set.size()},
                       {"filters", set},
                       {"appearances", row.appearances[static_cast<std::size_t>(m)]}});
    }
  }
  json cols = json::array();
  for (std::size_t c = 0; c < grid.cols.size(); ++c) {
    const auto& col = grid.cols[c];
    cols.push_back({{"class", col.class_id},
                    {"name", col.name},
                    {"iterations", col.iterations},
                    {"score", col.total_score}});
    for (auto t : col.iterations) lines.push_back({{"kind", "vertical"}, {"col", c}, {"iter", t}});
  }
  json cells = json::array();
  for (const auto& cell : grid.cells) cells.push_back({{"row", cell.row}, {"col", cell.col}, {"count", cell.count}});
  json rects = json::array();
  for (const auto& r : grid.rects) rects.push_back(rect_json(r));
  return {{"params",
           {{"k", grid.params.k},
            {"min_fraction", grid.params.min_fraction},
            {"top_k", grid.params.top_k},
            {"min_appearance", grid.params.min_appearance}}},
          {"rows", std::move(rows)},
          {"cols", std::move(cols)},
          {"cells", std::move(cells)},
          {"lines", std::move(lines)},
          {"rects", std::move(rects)}};
}

json to_json(const CellDetail& d) {
  json rects = json::array();
  for (const auto& r : d.rects) rects.push_back(rect_json(r));
  json repeated = json::object();
  for (const auto& [m, flag] : d.repeated) repeated[std::to_string(m)] = flag;
  return {{"layer", d.layer_id}, {"class", d.class_id},    {"count", d.count},      {"iterations", d.iterations},
          {"minisets", d.minisets}, {"rects", std::move(rects)}, {"repeated", std::move(repeated)}};
}

}  // namespace trainscope
