#pragma once

// Fixtures and brute-force oracles shared by the unit and acceptance tests.
// Oracles deliberately avoid the library's numeric helpers: they loop over the
// raw float payloads with plain long double arithmetic.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "trainscope/formats.hpp"
#include "trainscope/model.hpp"
#include "trainscope/synthgen.hpp"

namespace testsupport {

namespace fs = std::filesystem;
namespace ts = trainscope;

/// Directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ts") {
    std::random_device rd;
    std::uniform_int_distribution<std::uint64_t> dist;
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(dist(rd)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  fs::path path_;
};

inline bool rel_close(double a, double b, double tol) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  const double scale = std::max(std::abs(a), std::abs(b));
  return std::abs(a - b) <= tol * scale || a == b;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  double millis() const { return seconds() * 1e3; }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::uintmax_t directory_bytes(const fs::path& dir) {
  std::uintmax_t total = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) total += e.file_size();
  return total;
}

// ---------------------------------------------------------------------------
// Synth fixtures

inline ts::synth::LayerConfig layer(int filters, int wpf, std::string module = {}, std::string bottleneck = {}) {
  ts::synth::LayerConfig l;
  l.filters = filters;
  l.weights_per_filter = wpf;
  l.module = std::move(module);
  l.bottleneck = std::move(bottleneck);
  return l;
}

/// Ten layers, the first with 64 filters of which two never change.
inline ts::synth::SynthConfig dead_filter_config() {
  ts::synth::SynthConfig c;
  c.seed = 82;
  c.run_id = "dead-filters";
  c.dumps = 30;
  c.layers.push_back(layer(64, 27));
  for (int i = 1; i < 10; ++i) c.layers.push_back(layer(32, 18));
  c.classes = 4;
  c.images_per_class = 10;
  c.plants.push_back(ts::synth::DeadFilter{0, 17});
  c.plants.push_back(ts::synth::DeadFilter{0, 43});
  return c;
}

/// One 50-image class with a stable 90% flip, everything else constant.
inline ts::synth::SynthConfig flip_config(bool to_correct = false) {
  ts::synth::SynthConfig c;
  c.seed = 7;
  c.run_id = "flip";
  c.dumps = 20;
  c.layers = {layer(16, 9), layer(16, 9)};
  c.classes = 3;
  c.images_per_class = 50;
  ts::synth::FlipEvent e;
  e.class_id = 1;
  e.dump = 10;
  e.fraction = 0.9;
  e.pre_stable = 5;
  e.post_stable = 5;
  e.to_correct = to_correct;
  c.plants.push_back(e);
  return c;
}

/// Baseline drift only, for update-ratio checks.
inline ts::synth::SynthConfig drift_config() {
  ts::synth::SynthConfig c;
  c.seed = 3;
  c.run_id = "drift";
  c.dumps = 60;
  c.layers = {layer(64, 27, "conv1"), layer(64, 36, "conv2", "b1"), layer(64, 36, "conv2", "b2"), layer(32, 64)};
  c.classes = 2;
  c.images_per_class = 5;
  return c;
}

/// Four learning-curve archetypes, five classes each.
inline ts::synth::SynthConfig archetype_config() {
  ts::synth::SynthConfig c;
  c.seed = 11;
  c.run_id = "archetypes";
  c.dumps = 60;
  c.layers = {layer(8, 9)};
  c.classes = 20;
  c.images_per_class = 50;
  const ts::synth::Pattern patterns[] = {ts::synth::Pattern::Fast, ts::synth::Pattern::Step,
                                         ts::synth::Pattern::Slow, ts::synth::Pattern::Never};
  for (int cls = 0; cls < c.classes; ++cls) {
    ts::synth::Archetype a;
    a.class_id = cls;
    a.pattern = patterns[cls % 4];
    c.plants.push_back(a);
  }
  return c;
}

/// The desk-scale fixture: 10 layers with 1024 filters, 20 x 50 images,
/// 200 dumps, nested into modules and bottlenecks.
inline ts::synth::SynthConfig large_config() {
  ts::synth::SynthConfig c;
  c.seed = 2024;
  c.run_id = "desk-scale";
  c.dumps = 200;
  c.layers = {layer(64, 27, "conv1"),
              layer(64, 36, "conv2", "conv2_1"),  layer(96, 36, "conv2", "conv2_1"),
              layer(96, 36, "conv2", "conv2_2"),  layer(128, 36, "conv2", "conv2_2"),
              layer(128, 36, "conv3", "conv3_1"), layer(128, 36, "conv3", "conv3_1"),
              layer(128, 36, "conv3", "conv3_2"), layer(96, 36, "conv3", "conv3_2"),
              layer(96, 32)};
  c.layers.back().id = "fc";
  c.classes = 20;
  c.images_per_class = 50;
  c.base_error = 0.04;
  c.labels = true;
  c.plants.push_back(ts::synth::DeadFilter{0, 5});
  c.plants.push_back(ts::synth::DeadFilter{0, 40});
  c.plants.push_back(ts::synth::DivergentFilter{2, 7, 30.0});
  c.plants.push_back(ts::synth::FilterSpike{4, 11, 60});
  c.plants.push_back(ts::synth::FilterSpike{1, 3, 120});
  const int flips[][2] = {{2, 60}, {5, 60}, {9, 120}, {13, 150}, {2, 120}};
  for (const auto& f : flips) {
    ts::synth::FlipEvent e;
    e.class_id = f[0];
    e.dump = f[1];
    c.plants.push_back(e);
  }
  for (int cls = 15; cls < 20; ++cls) {
    ts::synth::Archetype a;
    a.class_id = cls;
    a.pattern = cls % 2 ? ts::synth::Pattern::Slow : ts::synth::Pattern::Fast;
    c.plants.push_back(a);
  }
  c.plants.push_back(ts::synth::AlwaysWrong{0, 3});
  return c;
}

// ---------------------------------------------------------------------------
// Raw-dump oracles

struct NaiveStats {
  double mean, sd, sum, min, max;
};

/// Population statistics by plain loops in long double.
inline NaiveStats naive_stats(const std::vector<float>& v) {
  long double sum = 0, mn = INFINITY, mx = -INFINITY;
  std::size_t n = 0;
  for (float x : v) {
    if (!std::isfinite(x)) continue;
    sum += x;
    mn = std::min<long double>(mn, x);
    mx = std::max<long double>(mx, x);
    ++n;
  }
  const long double mean = sum / n;
  long double m2 = 0;
  for (float x : v)
    if (std::isfinite(x)) m2 += (x - mean) * (x - mean);
  return {double(mean), double(std::sqrt(m2 / n)), double(sum), double(mn), double(mx)};
}

inline double naive_update_ratio(const std::vector<float>& prev, const std::vector<float>& cur) {
  long double d2 = 0, p2 = 0;
  for (std::size_t i = 0; i < prev.size(); ++i) {
    const long double d = static_cast<long double>(cur[i]) - prev[i];
    d2 += d * d;
    p2 += static_cast<long double>(prev[i]) * prev[i];
  }
  if (p2 == 0) return NAN;
  return static_cast<double>(std::sqrt(d2 / p2));
}

/// 1 - max(0, cos) straight from the definition.
inline double naive_change(const float* a, const float* b, std::size_t n) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  if (na == 0 && nb == 0) return 0;
  if (na == 0 || nb == 0) return 1;
  long double c = dot / std::sqrt(na * nb);
  if (c > 1) c = 1;
  return static_cast<double>(1 - std::max<long double>(0, c));
}

/// Every dump of a run directory held in memory.
struct RawRun {
  ts::RunManifest manifest;
  std::vector<ts::WeightDump> weights;
  std::vector<ts::ValidationDump> validation;

  static RawRun load(const fs::path& dir) {
    RawRun r;
    r.manifest = ts::load_manifest((dir / "manifest.json").string());
    for (auto t : r.manifest.dump_iterations) {
      r.weights.push_back(ts::read_weight_dump(ts::read_file(ts::weight_dump_path(dir, t))));
      r.validation.push_back(ts::read_validation_dump(ts::read_file(ts::validation_dump_path(dir, t))));
    }
    return r;
  }

  /// Raw floats of a layer's filter, in file order.
  std::vector<float> filter(std::size_t dump, const std::string& layer, int f) const {
    const auto& m = weights[dump].layer(layer).filters;
    return {m.data() + static_cast<std::ptrdiff_t>(f) * m.cols(), m.data() + static_cast<std::ptrdiff_t>(f + 1) * m.cols()};
  }
  std::vector<float> flat(std::size_t dump, const std::vector<std::string>& layers) const {
    std::vector<float> out;
    for (const auto& id : layers) {
      const auto& m = weights[dump].layer(id).filters;
      out.insert(out.end(), m.data(), m.data() + m.size());
    }
    return out;
  }
};

/// Leaf layer ids below a node, found by walking the manifest tree.
inline void collect_leaves(const ts::NodeSpec& n, bool inside, const std::string& target, std::vector<std::string>& out) {
  const bool in = inside || n.id == target;
  if (n.kind == ts::NodeKind::Layer) {
    if (in) out.push_back(n.id);
    return;
  }
  for (const auto& c : n.children) collect_leaves(c, in, target, out);
}

inline std::vector<std::string> leaves_below(const ts::RunManifest& m, const std::string& node) {
  std::vector<std::string> out;
  collect_leaves(m.network, false, node, out);
  return out;
}

/// Left/right flags straight from the rule text.
inline std::vector<int> naive_left(const std::vector<std::uint8_t>& s, int k) {
  std::vector<int> f(s.size(), 0);
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (static_cast<int>(j) < k || s[j] == s[j - 1]) continue;
    bool stable = true;
    for (std::size_t i = j - k; i < j; ++i) stable = stable && s[i] == s[j - 1];
    f[j] = stable;
  }
  return f;
}

inline std::vector<int> naive_right(const std::vector<std::uint8_t>& s, int k) {
  std::vector<int> f(s.size(), 0);
  for (std::size_t j = 1; j + k <= s.size(); ++j) {
    if (s[j] == s[j - 1]) continue;
    bool stable = true;
    for (std::size_t i = j; i < j + k; ++i) stable = stable && s[i] == s[j];
    f[j] = stable;
  }
  return f;
}

/// Adjusted Rand index via the pair-counting contingency table.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, long> nij;
  std::map<int, long> ai, bj;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++nij[{a[i], b[i]}];
    ++ai[a[i]];
    ++bj[b[i]];
  }
  auto c2 = [](long n) { return n * (n - 1) / 2.0; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, n] : nij) index += c2(n);
  for (const auto& [k, n] : ai) sa += c2(n);
  for (const auto& [k, n] : bj) sb += c2(n);
  const double expected = sa * sb / c2(static_cast<long>(a.size()));
  const double max_index = (sa + sb) / 2;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

/// Random target collection: up to `max_sets` sets over elements [0, universe).
inline std::vector<std::vector<int>> random_targets(std::mt19937_64& rng, int max_sets, int universe) {
  std::uniform_int_distribution<int> nsets(0, max_sets);
  std::uniform_real_distribution<double> density(0.05, 0.8);
  std::vector<std::vector<int>> targets(static_cast<std::size_t>(nsets(rng)));
  for (auto& t : targets) {
    const double p = density(rng);
    std::bernoulli_distribution in(p);
    for (int e = 0; e < universe; ++e)
      if (in(rng)) t.push_back(e);
  }
  return targets;
}

}  // namespace testsupport
