#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace trainscope {

enum class NodeKind { Model, ConvModule, Bottleneck, Layer };

std::string_view to_string(NodeKind kind);
NodeKind node_kind_from_string(std::string_view name);

/// One node of the nested network description found in manifest.json.
struct NodeSpec {
  std::string id;
  NodeKind kind = NodeKind::Layer;
  std::vector<NodeSpec> children;
  // Only meaningful for kind == Layer.
  int filter_count = 0;
  int weights_per_filter = 0;

  bool operator==(const NodeSpec&) const = default;
};

struct ClassSpec {
  int id = 0;
  std::string name;

  bool operator==(const ClassSpec&) const = default;
};

struct ImageMeta {
  int image_id = 0;
  int class_id = 0;
  std::string uri;

  bool operator==(const ImageMeta&) const = default;
};

/// Everything known about a training run before any dump is read.
///
/// Class ids and image ids are dense: they must equal their position in
/// `classes` / `images`. That keeps validation bitmaps addressable by id.
struct RunManifest {
  std::string run_id;
  int dump_interval = 1600;
  std::vector<std::int64_t> dump_iterations;
  NodeSpec network;
  std::vector<ClassSpec> classes;
  std::vector<ImageMeta> images;

  /// Throws FormatError describing the first violated invariant.
  void validate() const;

  bool operator==(const RunManifest&) const = default;
};

void to_json(nlohmann::json& j, const NodeSpec& n);
void from_json(const nlohmann::json& j, NodeSpec& n);
void to_json(nlohmann::json& j, const ClassSpec& c);
void from_json(const nlohmann::json& j, ClassSpec& c);
void to_json(nlohmann::json& j, const ImageMeta& m);
void from_json(const nlohmann::json& j, ImageMeta& m);
void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

RunManifest load_manifest(const std::string& path);
void save_manifest(const RunManifest& manifest, const std::string& path);

/// Flattened node of a NetworkHierarchy. Nodes are stored in preorder, so the
/// layers below a node occupy the contiguous range [leaf_begin, leaf_end) of
/// NetworkHierarchy::leaves().
struct Node {
  std::string id;
  NodeKind kind = NodeKind::Layer;
  int parent = -1;
  std::vector<int> children;
  int depth = 0;
  int filter_count = 0;
  int weights_per_filter = 0;
  int leaf_begin = 0;
  int leaf_end = 0;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(filter_count) * static_cast<std::size_t>(weights_per_filter);
  }
  bool operator==(const Node&) const = default;
};

/// model -> conv_module -> bottleneck -> layer tree. Immutable once built.
class NetworkHierarchy {
 public:
  NetworkHierarchy() = default;
  explicit NetworkHierarchy(const NodeSpec& root);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int index) const { return nodes_.at(static_cast<std::size_t>(index)); }
  const Node& root() const { return nodes_.front(); }

  /// Node indices of kind=layer in front-to-back order.
  const std::vector<int>& leaves() const { return leaves_; }
  std::span<const int> leaves_under(int index) const;

  std::optional<int> find(std::string_view id) const;
  /// Like find() but throws NotFound.
  int index_of(std::string_view id) const;
  /// Position of a layer node within leaves().
  int leaf_ordinal(int index) const;

  /// Number of edges on the longest root-to-leaf path.
  int depth() const;
  std::size_t total_weights() const;

  bool operator==(const NetworkHierarchy& other) const { return nodes_ == other.nodes_; }

 private:
  int add(const NodeSpec& spec, int parent, int depth);

  std::vector<Node> nodes_;
  std::vector<int> leaves_;
  std::vector<int> leaf_ordinal_;
  std::unordered_map<std::string, int> by_id_;
};

NetworkHierarchy build_hierarchy(const RunManifest& manifest);

/// Ids of all nodes of `kind`, front-to-back.
std::vector<std::string> level_slice(const NetworkHierarchy& h, NodeKind kind);

nlohmann::json hierarchy_to_json(const NetworkHierarchy& h);

using BitMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-image correctness bits over the dumped iterations (1 = correct).
/// Rows are images in id order, columns are dumps.
class ValidationMatrix {
 public:
  ValidationMatrix() = default;
  ValidationMatrix(std::vector<int> image_class, int class_count, int dump_count);

  static ValidationMatrix from_manifest(const RunManifest& manifest, int dump_count);

  int image_count() const { return static_cast<int>(bits_.rows()); }
  int dump_count() const { return static_cast<int>(bits_.cols()); }
  int class_count() const { return static_cast<int>(members_.size()); }

  void set_dump(int dump, std::span<const std::uint8_t> correct,
                std::span<const std::int32_t> labels = {});
  void set(int image, int dump, bool correct) { bits_(image, dump) = correct ? 1 : 0; }

  std::span<const std::uint8_t> sequence(int image) const {
    return {bits_.data() + static_cast<std::ptrdiff_t>(image) * bits_.cols(),
            static_cast<std::size_t>(bits_.cols())};
  }
  /// Image ids of a class, ascending. Throws NotFound.
  const std::vector<int>& class_images(int class_id) const;
  int class_of(int image) const { return image_class_.at(static_cast<std::size_t>(image)); }

  bool has_labels() const { return labels_.size() > 0; }
  /// Predicted class id, or -1 when the dump carried no labels.
  std::int32_t label(int image, int dump) const {
    return has_labels() ? labels_(image, dump) : -1;
  }

  const BitMatrix& bits() const { return bits_; }

 private:
  BitMatrix bits_;
  LabelMatrix labels_;
  std::vector<int> image_class_;
  std::vector<std::vector<int>> members_;
};

}  // namespace trainscope
