#include "trainscope/service.hpp"

#include <charconv>
#include <sstream>

#include <httplib.h>

#include "trainscope/clustering.hpp"
#include "trainscope/error.hpp"

namespace trainscope {

using nlohmann::json;

namespace {

template <typename T>
T parse_number(const std::string& name, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw InvalidArgument("parameter '" + name + "' is not a valid number: '" + text + "'");
  return value;
}

std::optional<std::string> param(const ParamMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

template <typename Derived>
json vector_json(const Eigen::DenseBase<Derived>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));  // NaN -> null
  return a;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) vector_json(m.row(r).transpose()).swap(rows.emplace_back());
  return rows;
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    while (pos < path.size() && path[pos] == '/') ++pos;
    const auto next = path.find('/', pos);
    const auto end = next == std::string_view::npos ? path.size() : next;
    if (end > pos) parts.emplace_back(path.substr(pos, end - pos));
    pos = end;
  }
  return parts;
}

int parse_class_id(const std::string& text) { return parse_number<int>("class id", text); }

json run_json(const RunStore& s) {
  json gaps = json::array();
  for (const auto& g : s.gaps()) gaps.push_back({{"iteration", g.iteration}, {"reason", g.reason}});
  const auto& m = s.manifest();
  return {{"run_id", m.run_id},
          {"dump_interval", m.dump_interval},
          {"dump_iterations", m.dump_iterations},
          {"dump_count", s.dump_count()},
          {"class_count", m.classes.size()},
          {"image_count", m.images.size()},
          {"layer_count", s.hierarchy().leaves().size()},
          {"filter_count",
           [&] {
             std::size_t n = 0;
             for (int leaf : s.hierarchy().leaves()) n += static_cast<std::size_t>(s.hierarchy().node(leaf).filter_count);
             return n;
           }()},
          {"anomaly_window", s.stored_window()},
          {"nonfinite_weights", s.nonfinite_weights()},
          {"gaps", std::move(gaps)}};
}

json clustering_json(const RunStore& s, int k, std::uint64_t seed) {
  const auto errors = s.class_error_matrix();
  const auto c = kmeans_classes(errors, k, seed);
  json clusters = json::array();
  for (int id = 0; id < c.k; ++id) {
    clusters.push_back({{"id", id},
                        {"classes", c.members[static_cast<std::size_t>(id)]},
                        {"mean_error", vector_json(c.mean_series.row(id).transpose())}});
  }
  return {{"k", c.k}, {"seed", seed}, {"iterations", c.iterations}, {"assignments", c.assignments},
          {"clusters", std::move(clusters)}};
}

json events_json(const std::vector<AnomalyEvent>& events) {
  json a = json::array();
  for (const auto& e : events) a.push_back(e);
  return a;
}

json class_stat_json(const RunStore& s, const ClassStat& cs) {
  return {{"class", cs.class_id},
          {"name", s.manifest().classes.at(static_cast<std::size_t>(cs.class_id)).name},
          {"class_size", cs.class_size},
          {"window", cs.window},
          {"iterations", s.manifest().dump_iterations},
          {"error", vector_json(cs.error)},
          {"left_score", vector_json(cs.left_score)},
          {"right_score", vector_json(cs.right_score)},
          {"events", events_json(cs.events)}};
}

json top_filters_json(const RunStore& s, std::int64_t iteration, int k) {
  json rows = json::array();
  const auto& h = s.hierarchy();
  for (const auto& rf : s.query_top_filters(iteration, k))
    rows.push_back({{"layer", h.node(h.leaves()[static_cast<std::size_t>(rf.layer_ordinal)]).id},
                    {"layer_index", rf.layer_ordinal},
                    {"filter", rf.filter},
                    {"change", rf.change}});
  return {{"iteration", iteration}, {"k", k}, {"filters", std::move(rows)}};
}

json layer_stats_json(const RunStore& s, const std::string& id, const std::string& measure_name) {
  json out{{"node", id}, {"iterations", s.manifest().dump_iterations}};
  const auto node = s.hierarchy().index_of(id);
  out["kind"] = to_string(s.hierarchy().node(node).kind);
  auto emit = [&](Measure m) {
    const auto series = s.query_layer_stat(id, m);
    std::vector<double> finite;
    for (Eigen::Index i = 0; i < series.size(); ++i)
      if (std::isfinite(series[i])) finite.push_back(series[i]);
    json entry{{"series", vector_json(series)}};
    if (!finite.empty()) {
      const auto b = boxplot_summary(Eigen::Map<const Eigen::VectorXd>(finite.data(), static_cast<Eigen::Index>(finite.size())));
      entry["boxplot"] = {{"min", b.min}, {"q1", b.q1}, {"median", b.median}, {"q3", b.q3}, {"max", b.max}};
    }
    out["measures"][std::string(to_string(m))] = std::move(entry);
  };
  if (measure_name == "all") {
    for (auto m : {Measure::Mean, Measure::Sd, Measure::Sum, Measure::Min, Measure::Max, Measure::UpdateRatio}) emit(m);
  } else {
    emit(measure_from_string(measure_name));
  }
  return out;
}

json layer_filters_json(const RunStore& s, const std::string& id, NormalizeMode mode, std::optional<int> cols) {
  Eigen::MatrixXd m = s.query_layer_filters(id, mode);
  const auto its = s.iterations();
  std::vector<std::int64_t> col_iterations(its.begin() + 1, its.end());
  json out{{"layer", id}, {"normalize", to_string(mode)}, {"filters", m.rows()}};
  if (cols && *cols < m.cols()) {
    const auto n = m.cols();
    std::vector<std::int64_t> pooled;
    for (int b = 0; b < *cols; ++b) pooled.push_back(col_iterations[static_cast<std::size_t>(b * n / *cols)]);
    m = downsample_columns(m, *cols);
    col_iterations = std::move(pooled);
  }
  out["columns"] = col_iterations;
  out["values"] = matrix_json(m);
  return out;
}

json cube_json(const RunStore& s, const QueryParams& p) {
  const auto& h = s.hierarchy();
  std::vector<std::string> layer_nodes = level_slice(h, NodeKind::ConvModule);
  if (layer_nodes.empty()) layer_nodes = level_slice(h, NodeKind::Layer);
  json layers = json::array();
  for (const auto& id : layer_nodes)
    layers.push_back({{"node", id},
                      {"sd", vector_json(s.query_layer_stat(id, Measure::Sd))},
                      {"mean", vector_json(s.query_layer_stat(id, Measure::Mean))}});
  const auto grid = build_grid(s, p.grid());
  return {{"iterations", s.manifest().dump_iterations},
          {"validation",
           {{"clusters", clustering_json(s, std::min<int>(p.cluster_k, static_cast<int>(s.manifest().classes.size())), p.seed)},
            {"events", events_json(grid.events)}}},
          {"layers", std::move(layers)},
          {"correlation", to_json(grid)}};
}

}  // namespace

void QueryParams::validate() const {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (!(min_fraction > 0 && min_fraction <= 1)) throw InvalidArgument("min_fraction must lie in (0, 1]");
  if (top_k < 1) throw InvalidArgument("top_k must be >= 1");
  if (min_appearance < 1) throw InvalidArgument("min_appearance must be >= 1");
  if (cluster_k < 1) throw InvalidArgument("cluster_k must be >= 1");
}

QueryParams parse_query_params(const ParamMap& params, QueryParams p) {
  if (auto v = param(params, "k")) p.k = parse_number<int>("k", *v);
  if (auto v = param(params, "min_fraction")) p.min_fraction = parse_number<double>("min_fraction", *v);
  if (auto v = param(params, "top_k")) p.top_k = parse_number<int>("top_k", *v);
  if (auto v = param(params, "min_appearance")) p.min_appearance = parse_number<int>("min_appearance", *v);
  if (auto v = param(params, "normalize")) p.normalize_mode = normalize_mode_from_string(*v);
  if (auto v = param(params, "cluster_k")) p.cluster_k = parse_number<int>("cluster_k", *v);
  if (auto v = param(params, "seed")) p.seed = parse_number<std::uint64_t>("seed", *v);
  p.validate();
  return p;
}

Eigen::MatrixXd downsample_columns(const Eigen::MatrixXd& m, int cols) {
  if (cols < 1) throw InvalidArgument("cols must be >= 1");
  const Eigen::Index n = m.cols();
  if (cols >= n) return m;
  Eigen::MatrixXd out(m.rows(), cols);
  for (int b = 0; b < cols; ++b) {
    const Eigen::Index lo = b * n / cols;
    const Eigen::Index hi = (b + 1) * n / cols;
    out.col(b) = m.middleCols(lo, hi - lo).rowwise().maxCoeff();
  }
  return out;
}

json minisets_json(const CorrelationGrid& grid) {
  json layers = json::array();
  for (const auto& row : grid.rows) {
    json sets = json::array();
    for (std::size_t m = 0; m < row.partition.minisets.size(); ++m) {
      const bool kept = std::find(row.lines.begin(), row.lines.end(), static_cast<int>(m)) != row.lines.end();
      sets.push_back({{"id", m},
                      {"filters", row.partition.minisets[m]},
                      {"appearances", row.appearances[m]},
                      {"kept", kept}});
    }
    json membership = json::object();
    for (const auto& [t, ids] : row.partition.membership) membership[std::to_string(t)] = ids;
    layers.push_back({{"layer", row.layer_id}, {"minisets", std::move(sets)}, {"membership", std::move(membership)}});
  }
  return {{"min_appearance", grid.params.min_appearance}, {"layers", std::move(layers)}};
}

// QueryService

QueryService::QueryService(const RunStore& store, QueryParams defaults) : store_(store), defaults_(defaults) {
  if (!store_.sealed()) throw std::logic_error("QueryService needs a sealed store");
  defaults_.validate();
}

ApiResponse QueryService::handle(std::string_view path, const ParamMap& params) const {
  std::string key(path);
  for (const auto& [k, v] : params) key += "\x1f" + k + "=" + v;
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto response = handle_uncached(path, params);
  std::lock_guard lock(cache_mutex_);
  cache_.emplace(std::move(key), response);
  return response;
}

ApiResponse QueryService::handle_uncached(std::string_view path, const ParamMap& params) const {
  try {
    return {200, dispatch(path, params)};
  } catch (const NotFound& e) {
    return {404, {{"error", e.what()}, {"status", 404}}};
  } catch (const InvalidArgument& e) {
    return {400, {{"error", e.what()}, {"status", 400}}};
  } catch (const std::exception& e) {
    return {500, {{"error", e.what()}, {"status", 500}}};
  }
}

json QueryService::dispatch(std::string_view path, const ParamMap& params) const {
  const auto parts = split_path(path);
  const auto p = parse_query_params(params, defaults_);
  const auto& s = store_;
  auto unknown = [&]() -> json { throw NotFound("no such endpoint: " + std::string(path)); };
  if (parts.empty()) return unknown();

  const auto& head = parts[0];
  if (parts.size() == 1) {
    if (head == "run") return run_json(s);
    if (head == "hierarchy") return hierarchy_to_json(s.hierarchy());
    if (head == "clusters") {
      const int k = param(params, "k") ? parse_number<int>("k", *param(params, "k")) : p.cluster_k;
      return clustering_json(s, k, p.seed);
    }
    if (head == "classes") {
      json classes = json::array();
      std::optional<std::vector<int>> members;
      if (auto c = param(params, "cluster")) {
        const int cid = parse_number<int>("cluster", *c);
        const auto clustering = kmeans_classes(s.class_error_matrix(),
                                               std::min<int>(p.cluster_k, static_cast<int>(s.manifest().classes.size())), p.seed);
        if (cid < 0 || cid >= clustering.k) throw NotFound("unknown cluster " + std::to_string(cid));
        members = clustering.members[static_cast<std::size_t>(cid)];
      }
      const auto errors = s.class_error_matrix();
      for (const auto& c : s.manifest().classes) {
        if (members && std::find(members->begin(), members->end(), c.id) == members->end()) continue;
        classes.push_back({{"id", c.id},
                           {"name", c.name},
                           {"size", s.validation().class_images(c.id).size()},
                           {"error", vector_json(errors.row(c.id).transpose())}});
      }
      return {{"classes", std::move(classes)}};
    }
    if (head == "anomalies") {
      const auto events = detect_anomalies(s.validation(), s.iterations(), p.k, p.min_fraction);
      return {{"k", p.k}, {"min_fraction", p.min_fraction}, {"events", events_json(events)}};
    }
    if (head == "topfilters") {
      auto iter = param(params, "iter");
      if (!iter) throw InvalidArgument("parameter 'iter' is required");
      const int k = param(params, "k") ? parse_number<int>("k", *param(params, "k")) : p.top_k;
      return top_filters_json(s, parse_number<std::int64_t>("iter", *iter), k);
    }
    if (head == "correlation") return to_json(build_grid(s, p.grid()));
    if (head == "minisets") return minisets_json(build_grid(s, p.grid()));
    if (head == "cube") return cube_json(s, p);
    return unknown();
  }

  if (head == "classes") {
    const int id = parse_class_id(parts[1]);
    if (id < 0 || id >= static_cast<int>(s.manifest().classes.size()))
      throw NotFound("unknown class " + parts[1]);
    if (parts.size() == 2) return class_stat_json(s, s.query_class_stat(id, p.k, p.min_fraction));
    if (parts.size() == 3 && parts[2] == "images") {
      json rows = json::array();
      for (const auto& img : s.query_class_images(id)) {
        json row{{"id", img.meta.image_id}, {"class_id", img.meta.class_id}, {"uri", img.meta.uri}, {"sequence", img.sequence}};
        if (!img.labels.empty()) row["labels"] = img.labels;
        rows.push_back(std::move(row));
      }
      return {{"class", id}, {"iterations", s.manifest().dump_iterations}, {"images", std::move(rows)}};
    }
    return unknown();
  }
  if (head == "layers" && parts.size() == 3) {
    if (parts[2] == "stats") return layer_stats_json(s, parts[1], param(params, "measure").value_or("all"));
    if (parts[2] == "filters") {
      std::optional<int> cols;
      if (auto c = param(params, "cols")) cols = parse_number<int>("cols", *c);
      if (cols && *cols < 1) throw InvalidArgument("cols must be >= 1");
      return layer_filters_json(s, parts[1], p.normalize_mode, cols);
    }
    return unknown();
  }
  if (head == "correlation" && parts.size() == 2 && parts[1] == "cell") {
    auto layer = param(params, "layer");
    auto cls = param(params, "class");
    if (!layer || !cls) throw InvalidArgument("parameters 'layer' and 'class' are required");
    return to_json(cell_detail(build_grid(s, p.grid()), *layer, parse_class_id(*cls)));
  }
  return unknown();
}

void serve(const RunStore& store, const std::string& host, int port,
           const std::optional<std::filesystem::path>& ui_dir, QueryParams defaults) {
  QueryService service(store, defaults);
  httplib::Server server;
  server.Get(R"(/api(?:/v1)?(/.*))", [&service](const httplib::Request& req, httplib::Response& res) {
    ParamMap params;
    for (const auto& [k, v] : req.params) params[k] = v;
    const auto out = service.handle(req.matches[1].str(), params);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  });
  if (ui_dir && !server.set_mount_point("/", ui_dir->string()))
    throw std::runtime_error("cannot serve UI bundle from " + ui_dir->string());
  if (!server.bind_to_port(host, port))
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  server.listen_after_bind();
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "json") return ReportFormat::Json;
  if (name == "csv") return ReportFormat::Csv;
  throw InvalidArgument("unknown report format '" + std::string(name) + "' (expected json or csv)");
}

namespace {

std::string number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void anomalies_csv(std::ostream& out, const RunStore& s, const std::vector<AnomalyEvent>& events) {
  out << "class_id,class_name,iteration,dump_index,kind,score,score_fraction\n";
  for (const auto& e : events)
    out << e.class_id << ',' << s.manifest().classes.at(static_cast<std::size_t>(e.class_id)).name << ','
        << e.iteration << ',' << e.dump_index << ',' << to_string(e.kind) << ',' << e.score << ','
        << number(e.score_fraction) << '\n';
}

void minisets_csv(std::ostream& out, const CorrelationGrid& g) {
  out << "layer,miniset,size,appearances,kept,filters\n";
  for (const auto& row : g.rows)
    for (std::size_t m = 0; m < row.partition.minisets.size(); ++m) {
      const bool kept = std::find(row.lines.begin(), row.lines.end(), static_cast<int>(m)) != row.lines.end();
      out << row.layer_id << ',' << m << ',' << row.partition.minisets[m].size() << ',' << row.appearances[m] << ','
          << (kept ? 1 : 0) << ',';
      for (std::size_t i = 0; i < row.partition.minisets[m].size(); ++i)
        out << (i ? ";" : "") << row.partition.minisets[m][i];
      out << '\n';
    }
}

void grid_csv(std::ostream& out, const CorrelationGrid& g) {
  out << "layer,class_id,count\n";
  for (const auto& cell : g.cells)
    out << g.rows[static_cast<std::size_t>(cell.row)].layer_id << ','
        << g.cols[static_cast<std::size_t>(cell.col)].class_id << ',' << cell.count << '\n';
}

}  // namespace

std::string export_report(const RunStore& store, const QueryParams& params, std::string_view what,
                          ReportFormat format) {
  params.validate();
  const bool all = what == "all";
  if (!all && what != "anomalies" && what != "minisets" && what != "grid")
    throw InvalidArgument("unknown report '" + std::string(what) + "' (expected anomalies, minisets, grid or all)");

  const auto grid = build_grid(store, params.grid());
  if (format == ReportFormat::Json) {
    json out = json::object();
    if (all || what == "anomalies")
      out["anomalies"] = {{"k", params.k}, {"min_fraction", params.min_fraction}, {"events", events_json(grid.events)}};
    if (all || what == "minisets") out["minisets"] = minisets_json(grid);
    if (all || what == "grid") out["correlation"] = to_json(grid);
    return out.dump(2) + "\n";
  }

  std::ostringstream out;
  if (all) out << "# anomalies\n";
  if (all || what == "anomalies") anomalies_csv(out, store, grid.events);
  if (all) out << "# minisets\n";
  if (all || what == "minisets") minisets_csv(out, grid);
  if (all) out << "# grid\n";
  if (all || what == "grid") grid_csv(out, grid);
  return out.str();
}

}  // namespace trainscope
