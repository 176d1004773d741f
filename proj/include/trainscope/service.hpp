#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "trainscope/correlation.hpp"
#include "trainscope/stats.hpp"
#include "trainscope/store.hpp"

namespace trainscope {

/// Interactive parameters shared by the API, the reports and the UI sliders.
struct QueryParams {
  int k = 5;
  double min_fraction = 0.5;
  int top_k = 100;
  int min_appearance = 1;
  NormalizeMode normalize_mode = NormalizeMode::Filter;
  int cluster_k = 4;
  std::uint64_t seed = 0;

  GridParams grid() const { return {k, min_fraction, top_k, min_appearance}; }
  /// Throws InvalidArgument.
  void validate() const;
};

using ParamMap = std::map<std::string, std::string>;

/// Reads the QueryParams fields present in `params` on top of `base`.
QueryParams parse_query_params(const ParamMap& params, QueryParams base = {});

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Read-only query dispatcher over a sealed store. Paths are relative to
/// /api/v1 (e.g. "/classes/3/images"). Responses are cached per
/// (path, parameters); the cache is safe for concurrent use.
class QueryService {
 public:
  explicit QueryService(const RunStore& store, QueryParams defaults = {});

  ApiResponse handle(std::string_view path, const ParamMap& params = {}) const;
  ApiResponse handle_uncached(std::string_view path, const ParamMap& params = {}) const;

  const RunStore& store() const { return store_; }

 private:
  nlohmann::json dispatch(std::string_view path, const ParamMap& params) const;

  const RunStore& store_;
  QueryParams defaults_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, ApiResponse> cache_;
};

/// Column max-pooling of a change matrix down to at most `cols` columns.
Eigen::MatrixXd downsample_columns(const Eigen::MatrixXd& m, int cols);

nlohmann::json minisets_json(const CorrelationGrid& grid);

/// Blocks serving /api/v1 and, when given, static files from `ui_dir`.
/// Throws std::runtime_error when the address cannot be bound.
void serve(const RunStore& store, const std::string& host, int port,
           const std::optional<std::filesystem::path>& ui_dir = std::nullopt,
           QueryParams defaults = {});

enum class ReportFormat { Json, Csv };
/// Throws InvalidArgument for anything but "json" or "csv".
ReportFormat report_format_from_string(std::string_view name);

/// `what` is one of anomalies, minisets, grid, all. Output is byte-stable for
/// fixed parameters.
std::string export_report(const RunStore& store, const QueryParams& params, std::string_view what,
                          ReportFormat format);

}  // namespace trainscope
