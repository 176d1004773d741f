#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trainscope/model.hpp"

namespace trainscope::synth {

struct LayerConfig {
  std::string id;  // defaults to "layer<i>"
  int filters = 1;
  int weights_per_filter = 1;
  std::string module;      // optional grouping into a conv_module
  std::string bottleneck;  // optional grouping inside the module
};

/// Weights frozen at their initial values for the whole run.
struct DeadFilter {
  int layer = 0;
  int filter = 0;
};

/// Drifts `scale` times faster than the baseline at every dump.
struct DivergentFilter {
  int layer = 0;
  int filter = 0;
  double scale = 30.0;
};

/// Weight vector negated at `dump`, giving a change degree of exactly 1.
struct FilterSpike {
  int layer = 0;
  int filter = 0;
  int dump = 1;
};

/// round(fraction * m) images of the class hold one value from the previous
/// flip event of the same class (or dump 0) up to `dump`, and the opposite
/// value from `dump` on. Images already holding the first value are picked
/// first, so several events on one class compose without extra transitions.
/// Events of one class must be at least their flanks apart.
struct FlipEvent {
  int class_id = 0;
  int dump = 0;
  double fraction = 0.9;
  int pre_stable = 5;
  int post_stable = 5;
  bool to_correct = false;
};

/// Image (index within its class) misclassified at every dump.
struct AlwaysWrong {
  int class_id = 0;
  int image = 0;
};

enum class Pattern { Fast, Step, Slow, Never };

/// Class-level learning curve. Every image switches once from wrong to correct
/// at a dump drawn from the pattern's window (never: stays wrong).
struct Archetype {
  int class_id = 0;
  Pattern pattern = Pattern::Fast;
  /// Fast pattern only: last dump by which every image is correct.
  std::optional<int> until;
};

using Plant = std::variant<DeadFilter, DivergentFilter, FilterSpike, FlipEvent, AlwaysWrong, Archetype>;

struct SynthConfig {
  std::uint64_t seed = 1;
  std::string run_id = "synth";
  int dump_interval = 1600;
  int dumps = 10;
  std::vector<LayerConfig> layers;
  int classes = 2;
  int images_per_class = 50;
  /// Fraction of each class's images that are always wrong.
  double base_error = 0.0;
  double init_sd = 0.05;
  /// Target ||delta|| / ||w|| per filter and dump.
  double update_ratio = 1e-3;
  bool labels = false;
  std::vector<Plant> plants;

  /// Throws InvalidArgument for out-of-bounds plants or bad sizes.
  void validate() const;
};

void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const SynthConfig& c);
SynthConfig load_config(const std::filesystem::path& path);

/// Generator bookkeeping for tests.
struct SynthSummary {
  RunManifest manifest;
  /// Image ids (global) flipping at each flip event, in plant order.
  std::vector<std::vector<int>> flip_images;
  std::vector<int> always_wrong_images;
  /// Class id -> archetype pattern, for classes with an archetype plant.
  std::map<int, Pattern> archetypes;
};

/// Builds the manifest of a config without writing anything.
RunManifest make_manifest(const SynthConfig& config);

/// Writes manifest.json, weights/iter_<N>.bin and validation/iter_<N>.bin.
/// Output is a pure function of the config.
SynthSummary generate_run(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace trainscope::synth
