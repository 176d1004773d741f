#include <doctest.h>

#include <json.hpp>

#include "support.hpp"
#include "trainscope/error.hpp"
#include "trainscope/model.hpp"

using namespace trainscope;

namespace {

NodeSpec layer_node(std::string id, int filters, int wpf) {
  return NodeSpec{std::move(id), NodeKind::Layer, {}, filters, wpf};
}

/// ResNet-50 shape: stem conv, four modules of 3/4/6/3 bottlenecks with three
/// convolutions each, and the FC layer.
NodeSpec resnet50() {
  NodeSpec root{"resnet50", NodeKind::Model, {}, 0, 0};
  root.children.push_back(layer_node("conv1", 64, 3 * 7 * 7));
  const int blocks[] = {3, 4, 6, 3};
  int width = 64;
  for (int m = 0; m < 4; ++m, width *= 2) {
    NodeSpec mod{"conv" + std::to_string(m + 2) + "_x", NodeKind::ConvModule, {}, 0, 0};
    for (int b = 0; b < blocks[m]; ++b) {
      const std::string base = "conv" + std::to_string(m + 2) + "_" + std::to_string(b + 1);
      NodeSpec bn{base, NodeKind::Bottleneck, {}, 0, 0};
      bn.children.push_back(layer_node(base + "_a", width, width));
      bn.children.push_back(layer_node(base + "_b", width, width * 9));
      bn.children.push_back(layer_node(base + "_c", width * 4, width));
      mod.children.push_back(std::move(bn));
    }
    root.children.push_back(std::move(mod));
  }
  root.children.push_back(layer_node("fc", 1000, 2048));
  return root;
}

NodeSpec nested_fixture() {
  NodeSpec root{"model", NodeKind::Model, {}, 0, 0};
  int n = 0;
  for (int m = 0; m < 2; ++m) {
    NodeSpec mod{"m" + std::to_string(m), NodeKind::ConvModule, {}, 0, 0};
    for (int b = 0; b < 2; ++b) {
      NodeSpec bn{"m" + std::to_string(m) + "b" + std::to_string(b), NodeKind::Bottleneck, {}, 0, 0};
      for (int l = 0; l < 2; ++l) bn.children.push_back(layer_node("l" + std::to_string(n++), 4, 3));
      mod.children.push_back(std::move(bn));
    }
    root.children.push_back(std::move(mod));
  }
  return root;
}

RunManifest small_manifest(NodeSpec network) {
  RunManifest m;
  m.run_id = "t";
  m.dump_iterations = {0, 1600, 3200};
  m.network = std::move(network);
  m.classes = {{0, "a"}, {1, "b"}};
  m.images = {{0, 0, "u0"}, {1, 0, "u1"}, {2, 1, "u2"}};
  return m;
}

}  // namespace

TEST_CASE("resnet-50 shaped manifest builds 50 leaves under four modules") {
  const auto h = build_hierarchy(small_manifest(resnet50()));
  CHECK(h.leaves().size() == 50);
  CHECK(level_slice(h, NodeKind::ConvModule).size() == 4);
  CHECK(level_slice(h, NodeKind::Bottleneck).size() == 16);
  CHECK(h.root().kind == NodeKind::Model);
}

TEST_CASE("single layer without modules") {
  NodeSpec root{"model", NodeKind::Model, {layer_node("only", 3, 2)}, 0, 0};
  const auto h = build_hierarchy(small_manifest(root));
  CHECK(h.leaves().size() == 1);
  CHECK(h.depth() == 1);
  CHECK(level_slice(h, NodeKind::Bottleneck).empty());
  CHECK(h.total_weights() == 6);
}

TEST_CASE("nested 2x2x2 fixture has 8 leaves at depth 3 below the root") {
  const auto h = build_hierarchy(small_manifest(nested_fixture()));
  CHECK(h.leaves().size() == 8);
  // root -> module -> bottleneck -> layer: four levels.
  CHECK(h.depth() + 1 == 4);
  const auto layers = level_slice(h, NodeKind::Layer);
  REQUIRE(layers.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(layers[static_cast<std::size_t>(i)] == "l" + std::to_string(i));

  const int m1 = h.index_of("m1");
  const auto under = h.leaves_under(m1);
  CHECK(under.size() == 4);
  CHECK(h.node(under.front()).id == "l4");
  CHECK(h.leaf_ordinal(h.index_of("l5")) == 5);
  CHECK_THROWS_AS(h.leaf_ordinal(m1), NotFound);
  CHECK_THROWS_AS(h.index_of("nope"), NotFound);
}

TEST_CASE("hierarchy construction rejects malformed trees") {
  SUBCASE("duplicate id") {
    NodeSpec root{"model", NodeKind::Model, {layer_node("x", 1, 1), layer_node("x", 1, 1)}, 0, 0};
    CHECK_THROWS_AS(NetworkHierarchy{root}, FormatError);
  }
  SUBCASE("layer with zero filters") {
    NodeSpec root{"model", NodeKind::Model, {layer_node("x", 0, 1)}, 0, 0};
    CHECK_THROWS_AS(NetworkHierarchy{root}, FormatError);
  }
  SUBCASE("filter count on a non-layer") {
    NodeSpec mod{"m", NodeKind::ConvModule, {layer_node("x", 1, 1)}, 4, 0};
    NodeSpec root{"model", NodeKind::Model, {mod}, 0, 0};
    CHECK_THROWS_AS(NetworkHierarchy{root}, FormatError);
  }
  SUBCASE("root not a model") {
    CHECK_THROWS_AS(NetworkHierarchy{layer_node("x", 1, 1)}, FormatError);
  }
  SUBCASE("second model node") {
    NodeSpec inner{"inner", NodeKind::Model, {layer_node("x", 1, 1)}, 0, 0};
    NodeSpec root{"model", NodeKind::Model, {inner}, 0, 0};
    CHECK_THROWS_AS(NetworkHierarchy{root}, FormatError);
  }
}

TEST_CASE("manifest invariants") {
  auto m = small_manifest(nested_fixture());
  CHECK_NOTHROW(m.validate());

  SUBCASE("iterations must increase") {
    m.dump_iterations = {0, 1600, 1600};
    CHECK_THROWS_AS(m.validate(), FormatError);
  }
  SUBCASE("unknown class") {
    m.images[2].class_id = 5;
    CHECK_THROWS_AS(m.validate(), FormatError);
  }
  SUBCASE("class without images") {
    m.classes.push_back({2, "c"});
    CHECK_THROWS_AS(m.validate(), FormatError);
  }
  SUBCASE("image ids are dense") {
    m.images[1].image_id = 7;
    CHECK_THROWS_AS(m.validate(), FormatError);
  }
}

TEST_CASE("manifest json round trip preserves the hierarchy") {
  testsupport::TempDir dir;
  const auto m = small_manifest(resnet50());
  const auto path = (dir / "manifest.json").string();
  save_manifest(m, path);
  const auto back = load_manifest(path);
  CHECK(back == m);
  CHECK(build_hierarchy(back) == build_hierarchy(m));

  const nlohmann::json j = m;
  for (const char* key : {"run_id", "dump_interval", "dump_iterations", "network", "classes", "images"})
    CHECK(j.contains(key));
  CHECK(j["images"][0].contains("class_id"));
  CHECK(j["images"][0].contains("uri"));
}

TEST_CASE("hierarchy json lists nodes with kinds") {
  const auto h = build_hierarchy(small_manifest(nested_fixture()));
  const auto j = hierarchy_to_json(h);
  CHECK(j.dump().find("\"bottleneck\"") != std::string::npos);
  CHECK(j.dump().find("\"l7\"") != std::string::npos);
}

TEST_CASE("validation matrix stores one row per image") {
  const auto m = small_manifest(nested_fixture());
  auto vm = ValidationMatrix::from_manifest(m, 3);
  const std::vector<std::uint8_t> d0{1, 0, 1}, d1{0, 0, 1}, d2{1, 1, 0};
  vm.set_dump(0, d0);
  vm.set_dump(1, d1);
  vm.set_dump(2, d2, std::vector<std::int32_t>{0, 1, 0});
  CHECK(std::vector<std::uint8_t>(vm.sequence(0).begin(), vm.sequence(0).end()) == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(vm.class_images(0) == std::vector<int>{0, 1});
  CHECK(vm.class_of(2) == 1);
  CHECK(vm.label(1, 2) == 1);
  CHECK(vm.label(1, 0) == -1);
  CHECK_THROWS_AS(vm.class_images(9), NotFound);
  CHECK_THROWS_AS(vm.set_dump(0, std::vector<std::uint8_t>{1, 1}), FormatError);
}
