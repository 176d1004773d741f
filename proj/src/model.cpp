#include "trainscope/model.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "trainscope/error.hpp"

namespace trainscope {

using nlohmann::json;

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Model: return "model";
    case NodeKind::ConvModule: return "conv_module";
    case NodeKind::Bottleneck: return "bottleneck";
    case NodeKind::Layer: return "layer";
  }
  return "layer";
}

NodeKind node_kind_from_string(std::string_view name) {
  if (name == "model") return NodeKind::Model;
  if (name == "conv_module") return NodeKind::ConvModule;
  if (name == "bottleneck") return NodeKind::Bottleneck;
  if (name == "layer") return NodeKind::Layer;
  throw FormatError("unknown node kind '" + std::string(name) + "'");
}

void to_json(json& j, const NodeSpec& n) {
  j = json{{"id", n.id}, {"kind", to_string(n.kind)}};
  if (n.kind == NodeKind::Layer) {
    j["filter_count"] = n.filter_count;
    j["weights_per_filter"] = n.weights_per_filter;
  } else {
    j["children"] = n.children;
  }
}

void from_json(const json& j, NodeSpec& n) {
  j.at("id").get_to(n.id);
  n.kind = node_kind_from_string(j.at("kind").get<std::string>());
  n.filter_count = j.value("filter_count", 0);
  n.weights_per_filter = j.value("weights_per_filter", 0);
  n.children.clear();
  if (auto it = j.find("children"); it != j.end()) it->get_to(n.children);
}

void to_json(json& j, const ClassSpec& c) { j = json{{"id", c.id}, {"name", c.name}}; }

void from_json(const json& j, ClassSpec& c) {
  j.at("id").get_to(c.id);
  c.name = j.value("name", "");
}

void to_json(json& j, const ImageMeta& m) {
  j = json{{"id", m.image_id}, {"class_id", m.class_id}, {"uri", m.uri}};
}

void from_json(const json& j, ImageMeta& m) {
  j.at("id").get_to(m.image_id);
  j.at("class_id").get_to(m.class_id);
  m.uri = j.value("uri", "");
}

void to_json(json& j, const RunManifest& m) {
  j = json{{"run_id", m.run_id},
           {"dump_interval", m.dump_interval},
           {"dump_iterations", m.dump_iterations},
           {"network", m.network},
           {"classes", m.classes},
           {"images", m.images}};
}

void from_json(const json& j, RunManifest& m) {
  j.at("run_id").get_to(m.run_id);
  m.dump_interval = j.value("dump_interval", 1600);
  j.at("dump_iterations").get_to(m.dump_iterations);
  j.at("network").get_to(m.network);
  j.at("classes").get_to(m.classes);
  j.at("images").get_to(m.images);
}

void RunManifest::validate() const {
  if (dump_interval <= 0) throw FormatError("dump_interval must be positive");
  for (std::size_t i = 1; i < dump_iterations.size(); ++i) {
    if (dump_iterations[i] <= dump_iterations[i - 1])
      throw FormatError("dump_iterations must be strictly increasing (at position " +
                        std::to_string(i) + ")");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id != static_cast<int>(i))
      throw FormatError("class ids must be dense and in manifest order");
  }
  std::vector<int> per_class(classes.size(), 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.image_id != static_cast<int>(i))
      throw FormatError("image ids must be unique, dense and in manifest order (image " +
                        std::to_string(img.image_id) + ")");
    if (img.class_id < 0 || img.class_id >= static_cast<int>(classes.size()))
      throw FormatError("image " + std::to_string(img.image_id) + " references unknown class " +
                        std::to_string(img.class_id));
    ++per_class[static_cast<std::size_t>(img.class_id)];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] == 0) throw FormatError("class " + std::to_string(c) + " has no images");
  }
  // Builds and discards the tree; throws on structural problems.
  NetworkHierarchy check(network);
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path);
  json j;
  try {
    in >> j;
    auto m = j.get<RunManifest>();
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path + ": " + e.what());
  }
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write manifest " + path);
  out << json(manifest).dump(2) << '\n';
}

// NetworkHierarchy

NetworkHierarchy::NetworkHierarchy(const NodeSpec& root) {
  if (root.kind != NodeKind::Model) throw FormatError("network root must be of kind model");
  add(root, -1, 0);
  leaf_ordinal_.assign(nodes_.size(), -1);
  for (std::size_t i = 0; i < leaves_.size(); ++i)
    leaf_ordinal_[static_cast<std::size_t>(leaves_[i])] = static_cast<int>(i);
}

int NetworkHierarchy::add(const NodeSpec& spec, int parent, int depth) {
  if (spec.id.empty()) throw FormatError("node with empty id");
  if (by_id_.count(spec.id)) throw FormatError("duplicate node id '" + spec.id + "'");
  if (parent >= 0 && spec.kind == NodeKind::Model)
    throw FormatError("node '" + spec.id + "': only the root may be of kind model");

  const int index = static_cast<int>(nodes_.size());
  Node node;
  node.id = spec.id;
  node.kind = spec.kind;
  node.parent = parent;
  node.depth = depth;
  node.leaf_begin = static_cast<int>(leaves_.size());

  if (spec.kind == NodeKind::Layer) {
    if (!spec.children.empty()) throw FormatError("layer '" + spec.id + "' has children");
    if (spec.filter_count <= 0) throw FormatError("layer '" + spec.id + "' has zero filters");
    if (spec.weights_per_filter <= 0)
      throw FormatError("layer '" + spec.id + "' has zero weights per filter");
    node.filter_count = spec.filter_count;
    node.weights_per_filter = spec.weights_per_filter;
  } else if (spec.filter_count != 0 || spec.weights_per_filter != 0) {
    throw FormatError("node '" + spec.id + "' of kind " + std::string(to_string(spec.kind)) +
                      " carries a filter count");
  }

  nodes_.push_back(std::move(node));
  by_id_.emplace(spec.id, index);
  if (spec.kind == NodeKind::Layer) leaves_.push_back(index);

  for (const auto& child : spec.children) {
    const int c = add(child, index, depth + 1);
    nodes_[static_cast<std::size_t>(index)].children.push_back(c);
  }
  nodes_[static_cast<std::size_t>(index)].leaf_end = static_cast<int>(leaves_.size());
  return index;
}

std::span<const int> NetworkHierarchy::leaves_under(int index) const {
  const auto& n = node(index);
  return std::span<const int>(leaves_).subspan(static_cast<std::size_t>(n.leaf_begin),
                                               static_cast<std::size_t>(n.leaf_end - n.leaf_begin));
}

std::optional<int> NetworkHierarchy::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

int NetworkHierarchy::index_of(std::string_view id) const {
  if (auto idx = find(id)) return *idx;
  throw NotFound("unknown node '" + std::string(id) + "'");
}

int NetworkHierarchy::leaf_ordinal(int index) const {
  const int ord = leaf_ordinal_.at(static_cast<std::size_t>(index));
  if (ord < 0) throw NotFound("node '" + node(index).id + "' is not a layer");
  return ord;
}

int NetworkHierarchy::depth() const {
  int d = 0;
  for (int leaf : leaves_) d = std::max(d, node(leaf).depth);
  return d;
}

std::size_t NetworkHierarchy::total_weights() const {
  std::size_t total = 0;
  for (int leaf : leaves_) total += node(leaf).weight_count();
  return total;
}

NetworkHierarchy build_hierarchy(const RunManifest& manifest) {
  return NetworkHierarchy(manifest.network);
}

std::vector<std::string> level_slice(const NetworkHierarchy& h, NodeKind kind) {
  // Preorder already is front-to-back for every level.
  std::vector<std::string> ids;
  for (const auto& n : h.nodes())
    if (n.kind == kind) ids.push_back(n.id);
  return ids;
}

namespace {
json node_json(const NetworkHierarchy& h, int index) {
  const auto& n = h.node(index);
  json j{{"id", n.id}, {"kind", to_string(n.kind)}, {"depth", n.depth}};
  if (n.kind == NodeKind::Layer) {
    j["filter_count"] = n.filter_count;
    j["weights_per_filter"] = n.weights_per_filter;
    j["layer_index"] = h.leaf_ordinal(index);
  } else {
    j["layers"] = {n.leaf_begin, n.leaf_end};
    json children = json::array();
    for (int c : n.children) children.push_back(node_json(h, c));
    j["children"] = std::move(children);
  }
  return j;
}
}  // namespace

json hierarchy_to_json(const NetworkHierarchy& h) { return node_json(h, 0); }

// ValidationMatrix

ValidationMatrix::ValidationMatrix(std::vector<int> image_class, int class_count, int dump_count)
    : bits_(BitMatrix::Zero(static_cast<Eigen::Index>(image_class.size()), dump_count)),
      image_class_(std::move(image_class)),
      members_(static_cast<std::size_t>(class_count)) {
  for (std::size_t i = 0; i < image_class_.size(); ++i) {
    const int c = image_class_[i];
    if (c < 0 || c >= class_count) throw FormatError("image class out of range");
    members_[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
  }
}

ValidationMatrix ValidationMatrix::from_manifest(const RunManifest& manifest, int dump_count) {
  std::vector<int> image_class;
  image_class.reserve(manifest.images.size());
  for (const auto& img : manifest.images) image_class.push_back(img.class_id);
  return ValidationMatrix(std::move(image_class), static_cast<int>(manifest.classes.size()),
                          dump_count);
}

void ValidationMatrix::set_dump(int dump, std::span<const std::uint8_t> correct,
                                std::span<const std::int32_t> labels) {
  if (static_cast<Eigen::Index>(correct.size()) != bits_.rows())
    throw FormatError("validation bitmap length does not match image count");
  for (Eigen::Index i = 0; i < bits_.rows(); ++i)
    bits_(i, dump) = correct[static_cast<std::size_t>(i)] ? 1 : 0;
  if (!labels.empty()) {
    if (static_cast<Eigen::Index>(labels.size()) != bits_.rows())
      throw FormatError("label array length does not match image count");
    if (labels_.size() == 0) labels_ = LabelMatrix::Constant(bits_.rows(), bits_.cols(), -1);
    for (Eigen::Index i = 0; i < bits_.rows(); ++i) labels_(i, dump) = labels[static_cast<std::size_t>(i)];
  }
}

const std::vector<int>& ValidationMatrix::class_images(int class_id) const {
  if (class_id < 0 || class_id >= class_count())
    throw NotFound("unknown class " + std::to_string(class_id));
  return members_[static_cast<std::size_t>(class_id)];
}

}  // namespace trainscope
