#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "support.hpp"
#include "trainscope/anomaly.hpp"
#include "trainscope/error.hpp"
#include "trainscope/ingest.hpp"
#include "trainscope/store.hpp"

using namespace trainscope;
namespace fs = std::filesystem;
using testsupport::rel_close;

namespace {

synth::SynthConfig mixed_config() {
  synth::SynthConfig c;
  c.seed = 31;
  c.run_id = "mixed";
  c.dumps = 16;
  c.layers = {testsupport::layer(12, 9, "m1", "b1"), testsupport::layer(10, 9, "m1", "b1"),
              testsupport::layer(8, 18, "m1", "b2"), testsupport::layer(6, 4)};
  c.classes = 4;
  c.images_per_class = 20;
  c.labels = true;
  c.plants.push_back(synth::DeadFilter{1, 2});
  c.plants.push_back(synth::FilterSpike{2, 5, 6});
  synth::FlipEvent easy;
  easy.class_id = 0;
  easy.dump = 3;
  easy.fraction = 1.0;
  easy.pre_stable = 3;
  easy.to_correct = true;
  c.plants.push_back(easy);
  synth::FlipEvent drop;
  drop.class_id = 2;
  drop.dump = 8;
  c.plants.push_back(drop);
  c.plants.push_back(synth::AlwaysWrong{3, 4});
  return c;
}

struct Fixture {
  testsupport::TempDir tmp{"store"};
  fs::path run = tmp / "run";
  fs::path store_dir = tmp / "store";
  synth::SynthSummary summary;
  Fixture() { summary = synth::generate_run(mixed_config(), run); }
};

std::vector<std::byte> slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("ingested store matches full-scan recomputation") {
  Fixture fx;
  auto result = ingest_run(fx.run, fx.store_dir);
  const auto& store = result.store;
  const auto raw = testsupport::RawRun::load(fx.run);
  const int dumps = 16;

  CHECK(result.report.dump_count == 16);
  CHECK(result.report.gaps.empty());
  CHECK(store.sealed());
  CHECK(store.dump_count() == dumps);

  SUBCASE("layer stats for every node and measure") {
    for (const auto& node : store.hierarchy().nodes()) {
      const auto leaves = testsupport::leaves_below(raw.manifest, node.id);
      const auto mean = store.query_layer_stat(node.id, Measure::Mean);
      const auto sd = store.query_layer_stat(node.id, Measure::Sd);
      const auto sum = store.query_layer_stat(node.id, Measure::Sum);
      const auto mn = store.query_layer_stat(node.id, Measure::Min);
      const auto mx = store.query_layer_stat(node.id, Measure::Max);
      const auto ur = store.query_layer_stat(node.id, Measure::UpdateRatio);
      REQUIRE(mean.size() == dumps);
      CHECK(std::isnan(ur[0]));
      for (int d = 0; d < dumps; ++d) {
        const auto flat = raw.flat(static_cast<std::size_t>(d), leaves);
        const auto o = testsupport::naive_stats(flat);
        CHECK(rel_close(mean[d], o.mean, 1e-9));
        CHECK(rel_close(sd[d], o.sd, 1e-9));
        CHECK(rel_close(sum[d], o.sum, 1e-9));
        CHECK(mn[d] == o.min);
        CHECK(mx[d] == o.max);
        if (d > 0) CHECK(rel_close(ur[d], testsupport::naive_update_ratio(raw.flat(static_cast<std::size_t>(d - 1), leaves), flat), 1e-9));
      }
    }
  }

  SUBCASE("filter change matrices") {
    for (const auto& id : level_slice(store.hierarchy(), NodeKind::Layer)) {
      const auto m = store.query_layer_filters(id);
      const auto& node = store.hierarchy().node(store.hierarchy().index_of(id));
      REQUIRE(m.rows() == node.filter_count);
      REQUIRE(m.cols() == dumps - 1);
      for (int f = 0; f < node.filter_count; ++f)
        for (int c = 0; c < dumps - 1; ++c) {
          const auto a = raw.filter(static_cast<std::size_t>(c), id, f);
          const auto b = raw.filter(static_cast<std::size_t>(c + 1), id, f);
          CHECK(rel_close(m(f, c), testsupport::naive_change(a.data(), b.data(), a.size()), 1e-9));
        }
      Eigen::MatrixXd normalized = store.query_layer_filters(id, NormalizeMode::Filter);
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (m.row(r).maxCoeff() == m.row(r).minCoeff()) continue;
        Eigen::Index a, b;
        m.row(r).maxCoeff(&a);
        normalized.row(r).maxCoeff(&b);
        CHECK(a == b);
      }
    }
    // Dead filter: zero change everywhere.
    CHECK(store.query_layer_filters("layer1").row(2).isZero());
    CHECK_THROWS_AS(store.query_layer_filters("m1"), NotFound);
    CHECK_THROWS_AS(store.query_layer_filters("nope"), NotFound);
  }

  SUBCASE("top filters") {
    int total = 0;
    for (int leaf : store.hierarchy().leaves()) total += store.hierarchy().node(leaf).filter_count;
    for (int d = 1; d < dumps; ++d) {
      const auto t = store.iterations()[static_cast<std::size_t>(d)];
      const auto all = store.query_top_filters(t, total + 50);
      REQUIRE(static_cast<int>(all.size()) == total);
      CHECK(std::is_sorted(all.begin(), all.end(), ranks_before));
      std::set<std::pair<int, int>> distinct;
      for (const auto& r : all) {
        distinct.insert({r.layer_ordinal, r.filter});
        const auto id = store.hierarchy().node(store.hierarchy().leaves()[static_cast<std::size_t>(r.layer_ordinal)]).id;
        CHECK(r.change == store.query_layer_filters(id)(r.filter, d - 1));
      }
      CHECK(static_cast<int>(distinct.size()) == total);
      CHECK(store.query_top_filters(t, 5).size() == 5);
    }
    const auto spike = store.query_top_filters(6 * 1600, 1);
    REQUIRE(spike.size() == 1);
    CHECK(spike[0].layer_ordinal == 2);
    CHECK(spike[0].filter == 5);
    CHECK(spike[0].change == 1.0);
    CHECK_THROWS_AS(store.query_top_filters(0, 5), InvalidArgument);
    CHECK_THROWS_AS(store.query_top_filters(1601, 5), NotFound);
    CHECK_THROWS_AS(store.query_top_filters(1600, 0), InvalidArgument);
  }

  SUBCASE("class statistics") {
    const auto easy = store.query_class_stat(0);
    CHECK(easy.error[2] == 1.0);
    for (int d = 3; d < dumps; ++d) CHECK(easy.error[d] == 0.0);

    const auto dropped = store.query_class_stat(2, 5, 0.5);
    REQUIRE(dropped.events.size() == 2);
    CHECK(dropped.events[0].iteration == 8 * 1600);
    CHECK(dropped.events[0].score == 18);

    for (int cls = 0; cls < 4; ++cls)
      for (int k : {1, 3, 5, 7}) {
        const auto cs = store.query_class_stat(cls, k, 0.5);
        std::vector<int> left(dumps, 0), right(dumps, 0), wrong(dumps, 0);
        for (const auto& img : raw.manifest.images) {
          if (img.class_id != cls) continue;
          std::vector<std::uint8_t> seq;
          for (const auto& v : raw.validation) seq.push_back(v.correct[static_cast<std::size_t>(img.image_id)]);
          const auto l = testsupport::naive_left(seq, k), r = testsupport::naive_right(seq, k);
          for (int d = 0; d < dumps; ++d) {
            left[static_cast<std::size_t>(d)] += l[static_cast<std::size_t>(d)];
            right[static_cast<std::size_t>(d)] += r[static_cast<std::size_t>(d)];
            wrong[static_cast<std::size_t>(d)] += seq[static_cast<std::size_t>(d)] == 0;
          }
        }
        for (int d = 0; d < dumps; ++d) {
          CHECK(cs.left_score[d] == left[static_cast<std::size_t>(d)]);
          CHECK(cs.right_score[d] == right[static_cast<std::size_t>(d)]);
          CHECK(cs.error[d] * cs.class_size == doctest::Approx(wrong[static_cast<std::size_t>(d)]));
        }
      }
    CHECK_THROWS_AS(store.query_class_stat(4), NotFound);
  }

  SUBCASE("class images") {
    const auto rows = store.query_class_images(3);
    REQUIRE(rows.size() == 20);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].meta.image_id == 60 + static_cast<int>(i));
      CHECK(rows[i].sequence.size() == static_cast<std::size_t>(dumps));
      CHECK(rows[i].labels.size() == static_cast<std::size_t>(dumps));
      for (int d = 0; d < dumps; ++d)
        CHECK(rows[i].sequence[static_cast<std::size_t>(d)] == raw.validation[static_cast<std::size_t>(d)].correct[static_cast<std::size_t>(60 + i)]);
    }
    const auto& wrong = rows[4].sequence;
    CHECK(std::all_of(wrong.begin(), wrong.end(), [](auto b) { return b == 0; }));
    const auto again = store.query_class_images(3);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].sequence == rows[i].sequence);
    CHECK_THROWS_AS(store.query_class_images(-1), NotFound);
  }

  SUBCASE("reopened store answers identically") {
    const auto disk = RunStore::open(fx.store_dir);
    CHECK(disk.checksum() == store.checksum());
    CHECK(disk.manifest() == store.manifest());
    for (const auto& node : store.hierarchy().nodes())
      for (auto m : {Measure::Mean, Measure::Sd, Measure::Sum, Measure::Min, Measure::Max, Measure::UpdateRatio}) {
        const auto a = store.query_layer_stat(node.id, m), b = disk.query_layer_stat(node.id, m);
        for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(((a[i] == b[i]) || (std::isnan(a[i]) && std::isnan(b[i]))));
      }
    for (const auto& id : level_slice(store.hierarchy(), NodeKind::Layer))
      CHECK(store.query_layer_filters(id) == disk.query_layer_filters(id));
    for (int d = 1; d < dumps; ++d)
      CHECK(store.query_top_filters(d * 1600, 1000) == disk.query_top_filters(d * 1600, 1000));
    for (int c = 0; c < 4; ++c) {
      const auto a = store.query_class_stat(c), b = disk.query_class_stat(c);
      CHECK(a.error == b.error);
      CHECK(a.left_score == b.left_score);
      CHECK(a.right_score == b.right_score);
      CHECK(a.events == b.events);
      CHECK(store.query_class_images(c).size() == disk.query_class_images(c).size());
    }
    CHECK(disk.validation().bits() == store.validation().bits());
    CHECK(disk.raw_weight_dump(1600).has_value());
    CHECK(fs::exists(*disk.raw_weight_dump(1600)));
  }
}

TEST_CASE("queries on an unsealed store are refused") {
  Fixture fx;
  const auto raw = testsupport::RawRun::load(fx.run);
  StoreWriter writer(fx.store_dir, raw.manifest);
  writer.add_dump(0, raw.weights[0], raw.validation[0]);
  CHECK_FALSE(writer.pending().sealed());
  CHECK_THROWS_AS(writer.pending().query_layer_stat("layer0", Measure::Mean), std::logic_error);
  CHECK_THROWS_AS(writer.pending().query_class_images(0), std::logic_error);
  CHECK_THROWS_AS(writer.seal(), FormatError);  // one dump only
}

TEST_CASE("writer refuses out-of-order dumps and sealed directories") {
  Fixture fx;
  const auto raw = testsupport::RawRun::load(fx.run);
  {
    StoreWriter writer(fx.store_dir, raw.manifest);
    writer.add_dump(1600, raw.weights[1], raw.validation[1]);
    CHECK_THROWS_AS(writer.add_dump(0, raw.weights[0], raw.validation[0]), FormatError);
    writer.add_dump(3200, raw.weights[2], raw.validation[2]);
    writer.seal();
  }
  CHECK_THROWS_AS(StoreWriter(fx.store_dir, raw.manifest), FormatError);
}

TEST_CASE("tampered segments fail the seal checksum") {
  Fixture fx;
  ingest_run(fx.run, fx.store_dir);
  const auto seg = fx.store_dir / "segments" / "layer_filter.seg";
  auto bytes = slurp(seg);
  bytes[bytes.size() - 1] ^= std::byte{0x01};
  write_file(seg, bytes);
  CHECK_THROWS_WITH_AS(RunStore::open(fx.store_dir), doctest::Contains("checksum"), FormatError);
  fs::remove(fx.store_dir / "meta.json");
  CHECK_THROWS_AS(RunStore::open(fx.store_dir), FormatError);
}

TEST_CASE("segment headers") {
  Fixture fx;
  ingest_run(fx.run, fx.store_dir);
  const std::pair<const char*, const char*> segs[] = {{"layer_stat", "ILS "}, {"layer_filter", "ILF "},
                                                      {"iter_filter", "IIF "}, {"class_stat", "ICS "},
                                                      {"class_image", "ICI "}};
  for (const auto& [name, tag] : segs) {
    const auto bytes = slurp(fx.store_dir / "segments" / (std::string(name) + ".seg"));
    REQUIRE(bytes.size() >= 24);
    CHECK(std::string(reinterpret_cast<const char*>(bytes.data()), 4) == "DTSG");
    CHECK(std::string(reinterpret_cast<const char*>(bytes.data()) + 8, 4) == tag);
    ByteReader r(bytes, name);
    r.take(12);
    const auto width = r.u32();
    const auto rows = r.u64();
    CHECK(bytes.size() == 24 + width * rows);
  }
}

TEST_CASE("ingest is deterministic") {
  Fixture fx;
  ingest_run(fx.run, fx.tmp / "a");
  ingest_run(fx.run, fx.tmp / "b");
  for (const auto& e : fs::recursive_directory_iterator(fx.tmp / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), fx.tmp / "a");
    CHECK_MESSAGE(slurp(e.path()) == slurp(fx.tmp / "b" / rel), rel.string());
  }
}

TEST_CASE("missing dumps follow the configured policy") {
  Fixture fx;
  fs::remove(weight_dump_path(fx.run, 1600));

  IngestOptions fail;
  fail.missing = MissingPolicy::Fail;
  CHECK_THROWS_AS(ingest_run(fx.run, fx.tmp / "fail", fail), FormatError);

  auto result = ingest_run(fx.run, fx.store_dir);
  CHECK(result.report.dump_count == 15);
  REQUIRE(result.report.gaps.size() == 1);
  CHECK(result.report.gaps[0].iteration == 1600);
  CHECK_FALSE(result.report.warnings.empty());
  CHECK(result.store.gaps() == result.report.gaps);
  CHECK(result.store.iterations()[1] == 3200);
  CHECK(result.store.query_layer_filters("layer0").cols() == 14);
  CHECK(RunStore::open(fx.store_dir).gaps() == result.report.gaps);

  CHECK(missing_policy_from_string("skip") == MissingPolicy::Skip);
  CHECK_THROWS_AS(missing_policy_from_string("retry"), InvalidArgument);
}

TEST_CASE("ingest needs two dumps and a manifest") {
  Fixture fx;
  for (std::int64_t t = 1600; t < 16 * 1600; t += 1600) fs::remove(validation_dump_path(fx.run, t));
  CHECK_THROWS_AS(ingest_run(fx.run, fx.store_dir), FormatError);
  CHECK_THROWS_AS(ingest_run(fx.tmp / "nowhere", fx.tmp / "s2"), FormatError);
}

TEST_CASE("dropping raw dumps keeps every query working") {
  Fixture fx;
  IngestOptions opts;
  opts.retain_raw = false;
  auto result = ingest_run(fx.run, fx.store_dir, opts);
  CHECK_FALSE(fs::exists(fx.store_dir / "raw"));
  const auto disk = RunStore::open(fx.store_dir);
  CHECK_FALSE(disk.raw_retained());
  CHECK_FALSE(disk.raw_weight_dump(1600).has_value());
  CHECK(disk.query_top_filters(6 * 1600, 3).size() == 3);
}

TEST_CASE("non-finite weights are surfaced by ingest") {
  Fixture fx;
  auto dump = read_weight_dump(read_file(weight_dump_path(fx.run, 3200)));
  dump.layers[0].filters(0, 0) = std::numeric_limits<float>::quiet_NaN();
  write_file(weight_dump_path(fx.run, 3200), write_weight_dump(dump));
  const auto result = ingest_run(fx.run, fx.store_dir);
  CHECK(result.report.nonfinite_count == 1);
  CHECK(result.store.nonfinite_weights() == 1);
  const auto mean = result.store.query_layer_stat("layer0", Measure::Mean);
  CHECK(std::isfinite(mean[2]));
  CHECK(result.store.query_layer_filters("layer0")(0, 1) == 1.0);
}

TEST_CASE("measure names") {
  CHECK(measure_from_string("update_ratio") == Measure::UpdateRatio);
  CHECK(to_string(Measure::Sd) == "sd");
  CHECK_THROWS_AS(measure_from_string("median"), InvalidArgument);
}
