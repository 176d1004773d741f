#include "trainscope/ingest.hpp"

#include <chrono>

#include "trainscope/error.hpp"

namespace trainscope {

namespace fs = std::filesystem;

MissingPolicy missing_policy_from_string(std::string_view name) {
  if (name == "skip") return MissingPolicy::Skip;
  if (name == "fail") return MissingPolicy::Fail;
  throw InvalidArgument("missing policy must be 'skip' or 'fail', got '" + std::string(name) + "'");
}

IngestResult ingest_run(const fs::path& run_dir, const fs::path& store_dir, const IngestOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("no manifest.json in " + run_dir.string());
  RunManifest manifest = load_manifest(manifest_path.string());

  StoreWriter writer(store_dir, manifest, {options.retain_raw, options.anomaly_window});
  const auto& network = writer.pending().hierarchy();
  IngestReport report;

  for (std::int64_t iteration : manifest.dump_iterations) {
    const auto wpath = weight_dump_path(run_dir, iteration);
    const auto vpath = validation_dump_path(run_dir, iteration);
    std::string missing;
    if (!fs::exists(wpath)) missing = "weight dump missing";
    else if (!fs::exists(vpath)) missing = "validation dump missing";
    if (!missing.empty()) {
      if (options.missing == MissingPolicy::Fail)
        throw FormatError(missing + " for iteration " + std::to_string(iteration));
      writer.record_gap(iteration, missing);
      report.gaps.push_back({iteration, missing});
      report.warnings.push_back("skipping iteration " + std::to_string(iteration) + ": " + missing);
      continue;
    }

    auto weights = read_weight_dump(read_file(wpath), network);
    const auto validation = read_validation_dump(read_file(vpath), manifest.images.size());
    report.nonfinite_count += weights.nonfinite_count;
    if (weights.nonfinite_count)
      report.warnings.push_back("iteration " + std::to_string(iteration) + ": " +
                                std::to_string(weights.nonfinite_count) + " non-finite weights");
    writer.add_dump(iteration, std::move(weights), validation);
  }

  if (writer.dumps_added() < 2)
    throw FormatError("run has " + std::to_string(writer.dumps_added()) +
                      " readable dumps; at least two are required");
  report.dump_count = static_cast<std::size_t>(writer.dumps_added());
  RunStore store = writer.seal();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(store), std::move(report)};
}

}  // namespace trainscope
