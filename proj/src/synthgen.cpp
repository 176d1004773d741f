#include "trainscope/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "trainscope/error.hpp"
#include "trainscope/formats.hpp"

namespace trainscope::synth {

using nlohmann::json;

namespace {

constexpr std::uint64_t kValidationStream = 0x9E3779B97F4A7C15ULL;

std::string_view pattern_name(Pattern p) {
  switch (p) {
    case Pattern::Fast: return "fast";
    case Pattern::Step: return "step";
    case Pattern::Slow: return "slow";
    case Pattern::Never: return "never";
  }
  return "fast";
}

Pattern pattern_from_string(std::string_view s) {
  for (auto p : {Pattern::Fast, Pattern::Step, Pattern::Slow, Pattern::Never})
    if (pattern_name(p) == s) return p;
  throw InvalidArgument("unknown archetype pattern '" + std::string(s) + "'");
}

std::string layer_id(const SynthConfig& c, std::size_t i) {
  return c.layers[i].id.empty() ? "layer" + std::to_string(i) : c.layers[i].id;
}

int resolve_layer(const json& j, const std::vector<LayerConfig>& layers) {
  const auto& v = j.at("layer");
  if (v.is_number_integer()) return v.get<int>();
  const auto id = v.get<std::string>();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto name = layers[i].id.empty() ? "layer" + std::to_string(i) : layers[i].id;
    if (name == id) return static_cast<int>(i);
  }
  throw InvalidArgument("plant references unknown layer '" + id + "'");
}

void check_filter(const SynthConfig& c, int layer, int filter) {
  if (layer < 0 || layer >= static_cast<int>(c.layers.size()))
    throw InvalidArgument("plant layer " + std::to_string(layer) + " out of range");
  if (filter < 0 || filter >= c.layers[static_cast<std::size_t>(layer)].filters)
    throw InvalidArgument("plant filter " + std::to_string(filter) + " out of range for layer " +
                          std::to_string(layer));
}

void check_class(const SynthConfig& c, int cls) {
  if (cls < 0 || cls >= c.classes) throw InvalidArgument("plant class " + std::to_string(cls) + " out of range");
}

int flip_count(const FlipEvent& e, int m) {
  return static_cast<int>(std::lround(e.fraction * m));
}

}  // namespace

void SynthConfig::validate() const {
  if (dumps < 2) throw InvalidArgument("synth config needs at least 2 dumps");
  if (dump_interval < 1) throw InvalidArgument("dump_interval must be positive");
  if (layers.empty()) throw InvalidArgument("synth config needs at least one layer");
  for (const auto& l : layers)
    if (l.filters < 1 || l.weights_per_filter < 1) throw InvalidArgument("layer sizes must be positive");
  if (classes < 1 || images_per_class < 1) throw InvalidArgument("classes and images_per_class must be positive");
  if (base_error < 0 || base_error > 1) throw InvalidArgument("base_error must lie in [0, 1]");
  if (!(init_sd > 0) || !(update_ratio >= 0)) throw InvalidArgument("init_sd must be positive, update_ratio non-negative");
  if (labels && classes > 0xFFFF) throw InvalidArgument("labels need class ids below 65536");

  for (const auto& plant : plants) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, DeadFilter>) {
            check_filter(*this, p.layer, p.filter);
          } else if constexpr (std::is_same_v<T, DivergentFilter>) {
            check_filter(*this, p.layer, p.filter);
            if (!(p.scale > 0)) throw InvalidArgument("divergent scale must be positive");
          } else if constexpr (std::is_same_v<T, FilterSpike>) {
            check_filter(*this, p.layer, p.filter);
            if (p.dump < 1 || p.dump >= dumps) throw InvalidArgument("spike dump out of range");
          } else if constexpr (std::is_same_v<T, FlipEvent>) {
            check_class(*this, p.class_id);
            if (!(p.fraction > 0 && p.fraction <= 1)) throw InvalidArgument("flip fraction must lie in (0, 1]");
            if (p.pre_stable < 1 || p.post_stable < 1) throw InvalidArgument("flip flanks must be >= 1");
            if (p.dump - p.pre_stable < 0 || p.dump + p.post_stable > dumps)
              throw InvalidArgument("flip event at dump " + std::to_string(p.dump) + " does not fit its flanks");
          } else if constexpr (std::is_same_v<T, AlwaysWrong>) {
            check_class(*this, p.class_id);
            if (p.image < 0 || p.image >= images_per_class) throw InvalidArgument("always_wrong image out of range");
          } else if constexpr (std::is_same_v<T, Archetype>) {
            check_class(*this, p.class_id);
            if (p.until && (*p.until < 1 || *p.until >= dumps)) throw InvalidArgument("archetype 'until' out of range");
          }
        },
        plant);
  }
  // Consecutive flips of one class need their flanks between them.
  std::map<int, std::vector<const FlipEvent*>> by_class;
  for (const auto& plant : plants)
    if (const auto* e = std::get_if<FlipEvent>(&plant)) by_class[e->class_id].push_back(e);
  for (auto& [cls, events] : by_class) {
    std::sort(events.begin(), events.end(), [](const auto* a, const auto* b) { return a->dump < b->dump; });
    for (std::size_t i = 1; i < events.size(); ++i) {
      const int gap = events[i]->dump - events[i - 1]->dump;
      if (gap < events[i]->pre_stable || gap < events[i - 1]->post_stable)
        throw InvalidArgument("flip events of class " + std::to_string(cls) + " at dumps " +
                              std::to_string(events[i - 1]->dump) + " and " + std::to_string(events[i]->dump) +
                              " overlap their flanks");
    }
  }
}

void from_json(const json& j, SynthConfig& c) {
  c = SynthConfig{};
  c.seed = j.value("seed", std::uint64_t{1});
  c.run_id = j.value("run_id", std::string("synth"));
  c.dump_interval = j.value("dump_interval", 1600);
  c.dumps = j.value("dumps", 10);
  c.classes = j.value("classes", 2);
  c.images_per_class = j.value("images_per_class", 50);
  c.base_error = j.value("base_error", 0.0);
  c.init_sd = j.value("init_sd", 0.05);
  c.update_ratio = j.value("update_ratio", 1e-3);
  c.labels = j.value("labels", false);
  for (const auto& l : j.at("layers")) {
    LayerConfig lc;
    lc.id = l.value("id", std::string());
    lc.filters = l.at("filters").get<int>();
    lc.weights_per_filter = l.at("weights_per_filter").get<int>();
    lc.module = l.value("module", std::string());
    lc.bottleneck = l.value("bottleneck", std::string());
    c.layers.push_back(std::move(lc));
  }
  if (auto it = j.find("plants"); it != j.end()) {
    for (const auto& p : *it) {
      const auto type = p.at("type").get<std::string>();
      if (type == "dead_filter") {
        c.plants.push_back(DeadFilter{resolve_layer(p, c.layers), p.at("filter").get<int>()});
      } else if (type == "divergent_filter") {
        c.plants.push_back(DivergentFilter{resolve_layer(p, c.layers), p.at("filter").get<int>(), p.value("scale", 30.0)});
      } else if (type == "filter_spike") {
        c.plants.push_back(FilterSpike{resolve_layer(p, c.layers), p.at("filter").get<int>(), p.at("dump").get<int>()});
      } else if (type == "flip_event") {
        FlipEvent e;
        e.class_id = p.at("class").get<int>();
        e.dump = p.at("dump").get<int>();
        e.fraction = p.value("fraction", 0.9);
        e.pre_stable = p.value("pre_stable", 5);
        e.post_stable = p.value("post_stable", 5);
        e.to_correct = p.value("to", std::string("wrong")) == "correct";
        c.plants.push_back(e);
      } else if (type == "always_wrong") {
        c.plants.push_back(AlwaysWrong{p.at("class").get<int>(), p.at("image").get<int>()});
      } else if (type == "archetype") {
        Archetype a;
        a.class_id = p.at("class").get<int>();
        a.pattern = pattern_from_string(p.at("pattern").get<std::string>());
        if (p.contains("until")) a.until = p.at("until").get<int>();
        c.plants.push_back(a);
      } else {
        throw InvalidArgument("unknown plant type '" + type + "'");
      }
    }
  }
}

void to_json(json& j, const SynthConfig& c) {
  json layers = json::array();
  for (const auto& l : c.layers) {
    json lj{{"filters", l.filters}, {"weights_per_filter", l.weights_per_filter}};
    if (!l.id.empty()) lj["id"] = l.id;
    if (!l.module.empty()) lj["module"] = l.module;
    if (!l.bottleneck.empty()) lj["bottleneck"] = l.bottleneck;
    layers.push_back(std::move(lj));
  }
  json plants = json::array();
  for (const auto& plant : c.plants) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, DeadFilter>) {
            plants.push_back({{"type", "dead_filter"}, {"layer", p.layer}, {"filter", p.filter}});
          } else if constexpr (std::is_same_v<T, DivergentFilter>) {
            plants.push_back({{"type", "divergent_filter"}, {"layer", p.layer}, {"filter", p.filter}, {"scale", p.scale}});
          } else if constexpr (std::is_same_v<T, FilterSpike>) {
            plants.push_back({{"type", "filter_spike"}, {"layer", p.layer}, {"filter", p.filter}, {"dump", p.dump}});
          } else if constexpr (std::is_same_v<T, FlipEvent>) {
            plants.push_back({{"type", "flip_event"},
                              {"class", p.class_id},
                              {"dump", p.dump},
                              {"fraction", p.fraction},
                              {"pre_stable", p.pre_stable},
                              {"post_stable", p.post_stable},
                              {"to", p.to_correct ? "correct" : "wrong"}});
          } else if constexpr (std::is_same_v<T, AlwaysWrong>) {
            plants.push_back({{"type", "always_wrong"}, {"class", p.class_id}, {"image", p.image}});
          } else if constexpr (std::is_same_v<T, Archetype>) {
            json a{{"type", "archetype"}, {"class", p.class_id}, {"pattern", pattern_name(p.pattern)}};
            if (p.until) a["until"] = *p.until;
            plants.push_back(std::move(a));
          }
        },
        plant);
  }
  j = json{{"seed", c.seed},
           {"run_id", c.run_id},
           {"dump_interval", c.dump_interval},
           {"dumps", c.dumps},
           {"layers", std::move(layers)},
           {"classes", c.classes},
           {"images_per_class", c.images_per_class},
           {"base_error", c.base_error},
           {"init_sd", c.init_sd},
           {"update_ratio", c.update_ratio},
           {"labels", c.labels},
           {"plants", std::move(plants)}};
}

SynthConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open synth config " + path.string());
  json j;
  try {
    in >> j;
    return j.get<SynthConfig>();
  } catch (const json::exception& e) {
    throw InvalidArgument("synth config " + path.string() + ": " + e.what());
  }
}

RunManifest make_manifest(const SynthConfig& config) {
  config.validate();
  RunManifest m;
  m.run_id = config.run_id;
  m.dump_interval = config.dump_interval;
  for (int d = 0; d < config.dumps; ++d)
    m.dump_iterations.push_back(static_cast<std::int64_t>(d) * config.dump_interval);

  m.network.id = "model";
  m.network.kind = NodeKind::Model;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& lc = config.layers[i];
    NodeSpec* parent = &m.network;
    if (!lc.module.empty()) {
      auto& kids = parent->children;
      if (kids.empty() || kids.back().kind != NodeKind::ConvModule || kids.back().id != lc.module)
        kids.push_back(NodeSpec{lc.module, NodeKind::ConvModule, {}, 0, 0});
      parent = &kids.back();
    }
    if (!lc.bottleneck.empty()) {
      auto& kids = parent->children;
      if (kids.empty() || kids.back().kind != NodeKind::Bottleneck || kids.back().id != lc.bottleneck)
        kids.push_back(NodeSpec{lc.bottleneck, NodeKind::Bottleneck, {}, 0, 0});
      parent = &kids.back();
    }
    parent->children.push_back(NodeSpec{layer_id(config, i), NodeKind::Layer, {}, lc.filters, lc.weights_per_filter});
  }

  for (int c = 0; c < config.classes; ++c) m.classes.push_back({c, "class" + std::to_string(c)});
  for (int c = 0; c < config.classes; ++c)
    for (int i = 0; i < config.images_per_class; ++i) {
      const int id = c * config.images_per_class + i;
      m.images.push_back({id, c, "synth://class" + std::to_string(c) + "/img" + std::to_string(i) + ".jpg"});
    }
  m.validate();
  return m;
}

SynthSummary generate_run(const SynthConfig& config, const std::filesystem::path& out_dir) {
  SynthSummary summary;
  summary.manifest = make_manifest(config);
  const auto& manifest = summary.manifest;
  const int dumps = config.dumps;
  const int m = config.images_per_class;
  const int images = config.classes * m;

  // Validation schedule: bits[image][dump].
  std::mt19937_64 vrng(config.seed ^ kValidationStream);
  std::vector<std::vector<std::uint8_t>> bits(static_cast<std::size_t>(images),
                                              std::vector<std::uint8_t>(static_cast<std::size_t>(dumps), 1));
  auto class_permutation = [&](int cls) {
    std::vector<int> ids(static_cast<std::size_t>(m));
    std::iota(ids.begin(), ids.end(), cls * m);
    std::shuffle(ids.begin(), ids.end(), vrng);
    return ids;
  };
  auto switch_at = [&](int image, int dump) {
    auto& seq = bits[static_cast<std::size_t>(image)];
    for (int d = 0; d < dumps; ++d) seq[static_cast<std::size_t>(d)] = d >= dump ? 1 : 0;
  };

  for (const auto& plant : config.plants) {
    if (const auto* a = std::get_if<Archetype>(&plant)) {
      summary.archetypes[a->class_id] = a->pattern;
      int lo = 1, hi = dumps - 1;
      switch (a->pattern) {
        case Pattern::Fast: hi = a->until.value_or(std::max(1, dumps / 10)); break;
        case Pattern::Step: lo = std::max(1, dumps / 2 - 2); hi = std::min(dumps - 1, dumps / 2 + 2); break;
        case Pattern::Slow: break;
        case Pattern::Never: lo = hi = dumps; break;
      }
      std::uniform_int_distribution<int> pick(lo, std::max(lo, hi));
      for (int i = 0; i < m; ++i) {
        const int s = a->pattern == Pattern::Never ? dumps : pick(vrng);
        switch_at(a->class_id * m + i, s);
      }
    }
  }
  if (config.base_error > 0) {
    const int wrong = static_cast<int>(std::lround(config.base_error * m));
    for (int c = 0; c < config.classes; ++c) {
      auto perm = class_permutation(c);
      for (int i = 0; i < wrong; ++i) std::fill(bits[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].begin(),
                                                bits[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].end(), 0);
    }
  }
  // Flip events apply per class in dump order. Each event's opposite value
  // reaches back to the previous event of its class (or dump 0); images
  // already holding that value there are chosen first, so a later event reuses
  // the images of an earlier one and adds no transitions of its own.
  std::vector<std::size_t> flip_order;
  for (std::size_t i = 0; i < config.plants.size(); ++i)
    if (std::holds_alternative<FlipEvent>(config.plants[i])) flip_order.push_back(i);
  std::stable_sort(flip_order.begin(), flip_order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = std::get<FlipEvent>(config.plants[a]);
    const auto& eb = std::get<FlipEvent>(config.plants[b]);
    return std::tie(ea.class_id, ea.dump) < std::tie(eb.class_id, eb.dump);
  });
  std::map<std::size_t, std::vector<int>> chosen;
  std::map<int, int> last_flip;
  for (std::size_t idx : flip_order) {
    const auto& e = std::get<FlipEvent>(config.plants[idx]);
    const int start = last_flip.count(e.class_id) ? last_flip[e.class_id] : 0;
    const std::uint8_t after = e.to_correct ? 1 : 0;
    const std::uint8_t before = 1 - after;
    auto perm = class_permutation(e.class_id);
    std::stable_partition(perm.begin(), perm.end(), [&](int img) {
      const auto& seq = bits[static_cast<std::size_t>(img)];
      return std::all_of(seq.begin() + start, seq.begin() + e.dump, [&](std::uint8_t b) { return b == before; });
    });
    perm.resize(static_cast<std::size_t>(flip_count(e, m)));
    std::sort(perm.begin(), perm.end());
    for (int img : perm) {
      auto& seq = bits[static_cast<std::size_t>(img)];
      for (int d = start; d < dumps; ++d) seq[static_cast<std::size_t>(d)] = d >= e.dump ? after : before;
    }
    last_flip[e.class_id] = e.dump;
    chosen[idx] = std::move(perm);
  }
  for (auto& [idx, imgs] : chosen) summary.flip_images.push_back(std::move(imgs));
  for (const auto& plant : config.plants) {
    if (const auto* w = std::get_if<AlwaysWrong>(&plant)) {
      const int img = w->class_id * m + w->image;
      std::fill(bits[static_cast<std::size_t>(img)].begin(), bits[static_cast<std::size_t>(img)].end(), 0);
      summary.always_wrong_images.push_back(img);
    }
  }

  // Weight state.
  const std::size_t layers = config.layers.size();
  std::vector<double> layer_sd(layers);
  {
    std::vector<std::string> modules;
    for (std::size_t i = 0; i < layers; ++i) {
      const auto& mod = config.layers[i].module;
      if (!mod.empty() && (modules.empty() || modules.back() != mod)) modules.push_back(mod);
      const int ordinal = modules.empty() ? 0 : static_cast<int>(modules.size()) - 1;
      layer_sd[i] = config.init_sd * std::pow(0.5, ordinal);
    }
  }
  std::vector<std::vector<std::uint8_t>> dead(layers);
  std::vector<std::vector<double>> drift_scale(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    dead[l].assign(static_cast<std::size_t>(config.layers[l].filters), 0);
    drift_scale[l].assign(static_cast<std::size_t>(config.layers[l].filters), 1.0);
  }
  std::set<std::tuple<int, int, int>> spikes;  // (dump, layer, filter)
  for (const auto& plant : config.plants) {
    if (const auto* d = std::get_if<DeadFilter>(&plant))
      dead[static_cast<std::size_t>(d->layer)][static_cast<std::size_t>(d->filter)] = 1;
    else if (const auto* v = std::get_if<DivergentFilter>(&plant))
      drift_scale[static_cast<std::size_t>(v->layer)][static_cast<std::size_t>(v->filter)] = v->scale;
    else if (const auto* s = std::get_if<FilterSpike>(&plant))
      spikes.emplace(s->dump, s->layer, s->filter);
  }

  std::mt19937_64 wrng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  WeightDump state;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerWeights lw;
    lw.layer_id = layer_id(config, l);
    lw.filters.resize(config.layers[l].filters, config.layers[l].weights_per_filter);
    for (Eigen::Index i = 0; i < lw.filters.size(); ++i)
      lw.filters.data()[i] = static_cast<float>(layer_sd[l] * normal(wrng));
    state.layers.push_back(std::move(lw));
  }

  std::filesystem::create_directories(out_dir);
  save_manifest(manifest, (out_dir / "manifest.json").string());

  for (int d = 0; d < dumps; ++d) {
    if (d > 0) {
      for (std::size_t l = 0; l < layers; ++l) {
        auto& w = state.layers[l].filters;
        const double per_weight = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        for (Eigen::Index f = 0; f < w.rows(); ++f) {
          const double norm = w.row(f).cast<double>().norm();
          const double sigma = config.update_ratio * norm * per_weight * drift_scale[l][static_cast<std::size_t>(f)];
          const bool frozen = dead[l][static_cast<std::size_t>(f)] != 0;
          for (Eigen::Index i = 0; i < w.cols(); ++i) {
            const double z = normal(wrng);
            if (!frozen) w(f, i) = static_cast<float>(w(f, i) + sigma * z);
          }
          if (spikes.count({d, static_cast<int>(l), static_cast<int>(f)})) w.row(f) = -w.row(f);
        }
      }
    }
    const std::int64_t iteration = manifest.dump_iterations[static_cast<std::size_t>(d)];
    state.iteration = iteration;
    write_file(weight_dump_path(out_dir, iteration), write_weight_dump(state));

    ValidationDump vd;
    vd.iteration = iteration;
    vd.correct.resize(static_cast<std::size_t>(images));
    for (int img = 0; img < images; ++img) vd.correct[static_cast<std::size_t>(img)] = bits[static_cast<std::size_t>(img)][static_cast<std::size_t>(d)];
    if (config.labels) {
      vd.labels.resize(static_cast<std::size_t>(images));
      for (int img = 0; img < images; ++img) {
        const int cls = img / m;
        vd.labels[static_cast<std::size_t>(img)] = vd.correct[static_cast<std::size_t>(img)] ? cls : (cls + 1) % config.classes;
      }
    }
    write_file(validation_dump_path(out_dir, iteration), write_validation_dump(vd));
  }
  return summary;
}

}  // namespace trainscope::synth
