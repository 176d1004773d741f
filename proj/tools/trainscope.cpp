#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "trainscope/error.hpp"
#include "trainscope/formats.hpp"
#include "trainscope/ingest.hpp"
#include "trainscope/service.hpp"
#include "trainscope/synthgen.hpp"

namespace ts = trainscope;

int main(int argc, char** argv) {
  CLI::App app{"trainscope: training telemetry analytics"};
  app.require_subcommand(1);

  // ingest
  std::string run_dir, store_dir, missing = "skip";
  bool drop_raw = false;
  int window = 5;
  auto* ingest = app.add_subcommand("ingest", "Ingest a run directory into a sealed store");
  ingest->add_option("run_dir", run_dir, "Run directory with manifest.json, weights/ and validation/")->required();
  ingest->add_option("--out", store_dir, "Store directory")->required();
  ingest->add_option("--missing", missing, "Policy for missing dumps")->check(CLI::IsMember({"skip", "fail"}));
  ingest->add_flag("--drop-raw", drop_raw, "Do not keep raw dumps in the store");
  ingest->add_option("--window", window, "Anomaly window k precomputed in the store")->check(CLI::PositiveNumber);

  // synth
  std::string config_path, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic run from a config");
  synth->add_option("--config", config_path, "Synth config JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output run directory")->required();

  // serve
  std::string serve_store, host = "127.0.0.1", ui_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the query API (and optionally the UI bundle)");
  serve->add_option("--store", serve_store, "Store directory")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--ui", ui_dir, "Static UI directory")->check(CLI::ExistingDirectory);

  // report
  std::string what, report_store, format = "json", output;
  ts::QueryParams params;
  auto* report = app.add_subcommand("report", "Export anomalies, mini-sets or the correlation grid");
  report->add_option("what", what, "anomalies | minisets | grid | all")
      ->required()
      ->check(CLI::IsMember({"anomalies", "minisets", "grid", "all"}));
  report->add_option("--store", report_store, "Store directory")->required();
  report->add_option("--k", params.k, "Anomaly window");
  report->add_option("--min-fraction", params.min_fraction, "Minimum flip fraction");
  report->add_option("--top-k", params.top_k, "Top changed filters per anomaly iteration");
  report->add_option("--min-appearance", params.min_appearance, "Minimum mini-set appearance count");
  report->add_option("--format", format, "json | csv");
  report->add_option("-o,--output", output, "Write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      ts::IngestOptions opts;
      opts.missing = ts::missing_policy_from_string(missing);
      opts.retain_raw = !drop_raw;
      opts.anomaly_window = window;
      auto result = ts::ingest_run(run_dir, store_dir, opts);
      const auto& r = result.report;
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "ingested " << r.dump_count << " dumps into " << store_dir << " in " << r.wall_seconds << " s";
      if (!r.gaps.empty()) std::cout << " (" << r.gaps.size() << " gaps)";
      if (r.nonfinite_count) std::cout << " (" << r.nonfinite_count << " non-finite weights)";
      std::cout << "\n";
    } else if (*synth) {
      const auto cfg = ts::synth::load_config(config_path);
      const auto summary = ts::synth::generate_run(cfg, synth_out);
      std::cout << "wrote " << summary.manifest.dump_iterations.size() << " dumps to " << synth_out << "\n";
    } else if (*serve) {
      const auto store = ts::RunStore::open(serve_store);
      std::cout << "serving " << store.manifest().run_id << " on http://" << host << ":" << port << "\n" << std::flush;
      std::optional<std::filesystem::path> ui;
      if (!ui_dir.empty()) ui = ui_dir;
      ts::serve(store, host, port, ui);
    } else if (*report) {
      const auto fmt = ts::report_format_from_string(format);
      const auto store = ts::RunStore::open(report_store);
      const auto text = ts::export_report(store, params, what, fmt);
      if (output.empty()) {
        std::cout << text;
      } else {
        ts::write_file(output, std::as_bytes(std::span(text.data(), text.size())));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
