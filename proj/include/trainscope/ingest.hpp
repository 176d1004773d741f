#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "trainscope/store.hpp"

namespace trainscope {

enum class MissingPolicy { Skip, Fail };

/// "skip" or "fail"; throws InvalidArgument otherwise.
MissingPolicy missing_policy_from_string(std::string_view name);

struct IngestOptions {
  MissingPolicy missing = MissingPolicy::Skip;
  bool retain_raw = true;
  int anomaly_window = 5;
};

struct IngestReport {
  std::size_t dump_count = 0;
  std::uint64_t nonfinite_count = 0;
  double wall_seconds = 0;
  std::vector<StoreGap> gaps;
  std::vector<std::string> warnings;
};

struct IngestResult {
  RunStore store;
  IngestReport report;
};

/// Reads <run_dir>/manifest.json plus weights/ and validation/ dumps for every
/// listed iteration and writes a sealed store to `store_dir`. Dumps are
/// streamed one at a time.
IngestResult ingest_run(const std::filesystem::path& run_dir, const std::filesystem::path& store_dir,
                        const IngestOptions& options = {});

}  // namespace trainscope
