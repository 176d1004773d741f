#include "trainscope/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "trainscope/error.hpp"

namespace trainscope {

namespace fs = std::filesystem;
using nlohmann::json;

// Segment files: "DTSG" | version u32 | tag[4] | row_width u32 | row_count u64 | rows.
// Row layouts (little-endian, packed):
//   layer_stat   "ILS " 72 B: node u32, dump u32, mean f64, sd f64, sum f64, min f64,
//                             max f64, update_ratio f64 (NaN = absent), count u64, nonfinite u64
//   layer_filter "ILF " 20 B: layer u32, filter u32, column u32, change f64
//   iter_filter  "IIF " 24 B: column u32, rank u32, layer u32, filter u32, change f64
//   class_stat   "ICS " 24 B: class u32, dump u32, wrong u32, class_size u32, left u32, right u32
//   class_image  "ICI " 17 B: image u32, class u32, dump u32, correct u8, label i32 (-1 = none)
namespace {

constexpr std::string_view kSegmentMagic = "DTSG";

struct SegmentSpec {
  std::string_view name;
  std::string_view tag;
  std::uint32_t row_width;
};

constexpr SegmentSpec kLayerStat{"layer_stat", "ILS ", 72};
constexpr SegmentSpec kLayerFilter{"layer_filter", "ILF ", 20};
constexpr SegmentSpec kIterFilter{"iter_filter", "IIF ", 24};
constexpr SegmentSpec kClassStat{"class_stat", "ICS ", 24};
constexpr SegmentSpec kClassImage{"class_image", "ICI ", 17};
constexpr SegmentSpec kSegments[] = {kLayerStat, kLayerFilter, kIterFilter, kClassStat, kClassImage};

fs::path segment_path(const fs::path& dir, const SegmentSpec& spec) {
  return dir / "segments" / (std::string(spec.name) + ".seg");
}

class SegmentBuilder {
 public:
  explicit SegmentBuilder(const SegmentSpec& spec) : spec_(spec) {
    w_.magic(kSegmentMagic);
    w_.u32(kStoreFormatVersion);
    w_.magic(spec.tag);
    w_.u32(spec.row_width);
    count_pos_ = w_.bytes().size();
    w_.u64(0);
  }

  ByteWriter& row() {
    ++rows_;
    return w_;
  }

  std::vector<std::byte> finish() {
    auto bytes = w_.release();
    const std::size_t expected = count_pos_ + 8 + rows_ * spec_.row_width;
    if (bytes.size() != expected)
      throw std::logic_error("segment " + std::string(spec_.name) + " row width mismatch");
    for (int i = 0; i < 8; ++i)
      bytes[count_pos_ + static_cast<std::size_t>(i)] = static_cast<std::byte>((rows_ >> (8 * i)) & 0xFF);
    return bytes;
  }

  std::uint64_t rows() const { return rows_; }

 private:
  SegmentSpec spec_;
  ByteWriter w_;
  std::size_t count_pos_ = 0;
  std::uint64_t rows_ = 0;
};

/// Validates the header and positions the reader at the first row.
std::uint64_t open_segment(ByteReader& r, const SegmentSpec& spec) {
  r.expect_magic(kSegmentMagic);
  const auto version = r.u32();
  if (version != kStoreFormatVersion)
    throw FormatError("segment " + std::string(spec.name) + ": unsupported version " + std::to_string(version));
  r.expect_magic(spec.tag);
  if (r.u32() != spec.row_width)
    throw FormatError("segment " + std::string(spec.name) + ": unexpected row width");
  const auto rows = r.u64();
  if (r.remaining() != rows * spec.row_width)
    throw FormatError("segment " + std::string(spec.name) + ": size does not match row count");
  return rows;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::byte> json_bytes(const json& j) {
  const std::string s = j.dump(2) + "\n";
  std::vector<std::byte> out(s.size());
  std::memcpy(out.data(), s.data(), s.size());
  return out;
}

std::uint64_t store_checksum(const fs::path& dir) {
  std::uint64_t h = fnv1a64(read_file(dir / "manifest.json"));
  for (const auto& spec : kSegments) h = fnv1a64(read_file(segment_path(dir, spec)), h);
  return h;
}

void compute_class_tables(const ValidationMatrix& vm, int window,
                          Eigen::MatrixXi& wrong, Eigen::MatrixXi& left, Eigen::MatrixXi& right) {
  const int classes = vm.class_count();
  wrong = Eigen::MatrixXi::Zero(classes, vm.dump_count());
  left.resize(classes, vm.dump_count());
  right.resize(classes, vm.dump_count());
  for (int c = 0; c < classes; ++c) {
    for (int img : vm.class_images(c)) {
      auto seq = vm.sequence(img);
      for (int j = 0; j < vm.dump_count(); ++j)
        if (!seq[static_cast<std::size_t>(j)]) ++wrong(c, j);
    }
    const auto scores = class_anomaly_scores(vm, c, window);
    left.row(c) = scores.left.transpose();
    right.row(c) = scores.right.transpose();
  }
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= static_cast<std::uint8_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::Mean: return "mean";
    case Measure::Sd: return "sd";
    case Measure::Sum: return "sum";
    case Measure::Min: return "min";
    case Measure::Max: return "max";
    case Measure::UpdateRatio: return "update_ratio";
  }
  return "mean";
}

Measure measure_from_string(std::string_view name) {
  for (auto m : {Measure::Mean, Measure::Sd, Measure::Sum, Measure::Min, Measure::Max, Measure::UpdateRatio})
    if (to_string(m) == name) return m;
  throw InvalidArgument("unknown measure '" + std::string(name) + "'");
}

double NodeStatRow::get(Measure m) const {
  switch (m) {
    case Measure::Mean: return mean;
    case Measure::Sd: return sd;
    case Measure::Sum: return sum;
    case Measure::Min: return min;
    case Measure::Max: return max;
    case Measure::UpdateRatio: return update_ratio;
  }
  return mean;
}

// RunStore queries

void RunStore::require_sealed() const {
  if (!sealed_) throw std::logic_error("run store is not sealed");
}

int RunStore::dump_index(std::int64_t iteration) const {
  const auto& its = manifest_.dump_iterations;
  auto it = std::lower_bound(its.begin(), its.end(), iteration);
  if (it == its.end() || *it != iteration)
    throw NotFound("iteration " + std::to_string(iteration) + " was not dumped");
  return static_cast<int>(it - its.begin());
}

const NodeStatRow& RunStore::layer_stat_row(int node_index, int dump) const {
  require_sealed();
  return node_stats_.at(static_cast<std::size_t>(node_index) * static_cast<std::size_t>(dump_count()) +
                        static_cast<std::size_t>(dump));
}

Eigen::VectorXd RunStore::query_layer_stat(std::string_view node_id, Measure measure) const {
  require_sealed();
  const int node = hierarchy_.index_of(node_id);
  Eigen::VectorXd out(dump_count());
  for (int d = 0; d < dump_count(); ++d) out[d] = layer_stat_row(node, d).get(measure);
  return out;
}

Eigen::MatrixXd RunStore::query_layer_filters(std::string_view layer_id, NormalizeMode mode) const {
  require_sealed();
  const int node = hierarchy_.index_of(layer_id);
  if (hierarchy_.node(node).kind != NodeKind::Layer)
    throw NotFound("node '" + std::string(layer_id) + "' is not a layer");
  const auto& m = changes_.at(static_cast<std::size_t>(hierarchy_.leaf_ordinal(node)));
  return normalize_changes(m, mode);
}

std::vector<RankedFilter> RunStore::query_top_filters(std::int64_t iteration, int k) const {
  require_sealed();
  if (k < 1) throw InvalidArgument("k must be >= 1");
  const int d = dump_index(iteration);
  if (d == 0)
    throw InvalidArgument("iteration " + std::to_string(iteration) + " is the first dump and has no predecessor");
  const auto& ranking = rankings_.at(static_cast<std::size_t>(d - 1));
  const auto n = std::min(ranking.size(), static_cast<std::size_t>(k));
  return {ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(n)};
}

ClassStat RunStore::query_class_stat(int class_id, int k, double min_fraction) const {
  require_sealed();
  const auto& members = validation_.class_images(class_id);
  ClassStat cs;
  cs.class_id = class_id;
  cs.class_size = static_cast<int>(members.size());
  cs.window = k;
  cs.error = class_wrong_.row(class_id).transpose().cast<double>() / static_cast<double>(cs.class_size);
  ClassScores scores;
  if (k == window_) {
    scores.left = class_left_.row(class_id).transpose();
    scores.right = class_right_.row(class_id).transpose();
  } else {
    scores = class_anomaly_scores(validation_, class_id, k);
  }
  cs.events = class_events(class_id, cs.class_size, scores, iterations(), min_fraction);
  cs.left_score = std::move(scores.left);
  cs.right_score = std::move(scores.right);
  return cs;
}

std::vector<ClassImage> RunStore::query_class_images(int class_id) const {
  require_sealed();
  std::vector<ClassImage> rows;
  for (int img : validation_.class_images(class_id)) {
    ClassImage row;
    row.meta = manifest_.images.at(static_cast<std::size_t>(img));
    auto seq = validation_.sequence(img);
    row.sequence.assign(seq.begin(), seq.end());
    if (validation_.has_labels())
      for (int d = 0; d < dump_count(); ++d) row.labels.push_back(validation_.label(img, d));
    rows.push_back(std::move(row));
  }
  return rows;
}

const ValidationMatrix& RunStore::validation() const {
  require_sealed();
  return validation_;
}

Eigen::MatrixXd RunStore::class_error_matrix() const {
  require_sealed();
  Eigen::MatrixXd m = class_wrong_.cast<double>();
  for (int c = 0; c < validation_.class_count(); ++c)
    m.row(c) /= static_cast<double>(validation_.class_images(c).size());
  return m;
}

std::optional<fs::path> RunStore::raw_weight_dump(std::int64_t iteration) const {
  if (!raw_retained_ || dir_.empty()) return std::nullopt;
  dump_index(iteration);
  return weight_dump_path(dir_ / "raw", iteration);
}

RunStore RunStore::open(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json"))
    throw FormatError("store " + dir.string() + " is not sealed (meta.json missing)");
  json meta;
  {
    std::ifstream in(dir / "meta.json");
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw FormatError(std::string("meta.json: ") + e.what());
    }
  }
  if (meta.value("format_version", 0) != static_cast<int>(kStoreFormatVersion))
    throw FormatError("unsupported store format version");
  const std::uint64_t checksum = store_checksum(dir);
  if (meta.at("seal_checksum").get<std::string>() != hex64(checksum))
    throw FormatError("store checksum mismatch; segments were modified after sealing");

  RunStore s;
  s.dir_ = dir;
  s.manifest_ = load_manifest((dir / "manifest.json").string());
  s.hierarchy_ = build_hierarchy(s.manifest_);
  s.window_ = meta.at("anomaly_window").get<int>();
  s.raw_retained_ = meta.at("raw_retained").get<bool>();
  s.nonfinite_ = meta.at("nonfinite_weights").get<std::uint64_t>();
  s.checksum_ = checksum;
  for (const auto& g : meta.at("gaps")) s.gaps_.push_back({g.at("iteration"), g.at("reason")});

  const int dumps = s.dump_count();
  const int nodes = static_cast<int>(s.hierarchy_.nodes().size());
  const int cols = dumps - 1;
  const auto& leaves = s.hierarchy_.leaves();

  {
    const auto bytes = read_file(segment_path(dir, kLayerStat));
    ByteReader r(bytes, "layer_stat segment");
    const auto rows = open_segment(r, kLayerStat);
    if (rows != static_cast<std::uint64_t>(nodes) * static_cast<std::uint64_t>(dumps))
      throw FormatError("layer_stat segment: unexpected row count");
    s.node_stats_.resize(rows);
    for (std::uint64_t i = 0; i < rows; ++i) {
      const auto node = r.u32();
      const auto dump = r.u32();
      if (node >= static_cast<std::uint32_t>(nodes) || dump >= static_cast<std::uint32_t>(dumps))
        throw FormatError("layer_stat segment: row out of range");
      auto& row = s.node_stats_[static_cast<std::size_t>(node) * static_cast<std::size_t>(dumps) + dump];
      row.mean = r.f64();
      row.sd = r.f64();
      row.sum = r.f64();
      row.min = r.f64();
      row.max = r.f64();
      row.update_ratio = r.f64();
      row.count = r.u64();
      row.nonfinite = r.u64();
    }
  }
  {
    for (int leaf : leaves)
      s.changes_.emplace_back(Eigen::MatrixXd::Zero(s.hierarchy_.node(leaf).filter_count, cols));
    const auto bytes = read_file(segment_path(dir, kLayerFilter));
    ByteReader r(bytes, "layer_filter segment");
    const auto rows = open_segment(r, kLayerFilter);
    for (std::uint64_t i = 0; i < rows; ++i) {
      const auto layer = r.u32();
      const auto filter = r.u32();
      const auto col = r.u32();
      const double change = r.f64();
      if (layer >= s.changes_.size()) throw FormatError("layer_filter segment: layer out of range");
      auto& m = s.changes_[layer];
      if (filter >= m.rows() || col >= m.cols()) throw FormatError("layer_filter segment: cell out of range");
      m(filter, col) = change;
    }
  }
  {
    s.rankings_.assign(static_cast<std::size_t>(std::max(cols, 0)), {});
    const auto bytes = read_file(segment_path(dir, kIterFilter));
    ByteReader r(bytes, "iter_filter segment");
    const auto rows = open_segment(r, kIterFilter);
    for (std::uint64_t i = 0; i < rows; ++i) {
      const auto col = r.u32();
      const auto rank = r.u32();
      RankedFilter rf;
      rf.layer_ordinal = static_cast<int>(r.u32());
      rf.filter = static_cast<int>(r.u32());
      rf.change = r.f64();
      if (col >= s.rankings_.size()) throw FormatError("iter_filter segment: column out of range");
      auto& ranking = s.rankings_[col];
      if (rank != ranking.size()) throw FormatError("iter_filter segment: ranks out of order");
      ranking.push_back(rf);
    }
  }
  const int classes = static_cast<int>(s.manifest_.classes.size());
  {
    s.class_wrong_ = Eigen::MatrixXi::Zero(classes, dumps);
    s.class_left_ = Eigen::MatrixXi::Zero(classes, dumps);
    s.class_right_ = Eigen::MatrixXi::Zero(classes, dumps);
    const auto bytes = read_file(segment_path(dir, kClassStat));
    ByteReader r(bytes, "class_stat segment");
    const auto rows = open_segment(r, kClassStat);
    for (std::uint64_t i = 0; i < rows; ++i) {
      const auto c = r.u32();
      const auto d = r.u32();
      if (c >= static_cast<std::uint32_t>(classes) || d >= static_cast<std::uint32_t>(dumps))
        throw FormatError("class_stat segment: row out of range");
      s.class_wrong_(c, d) = static_cast<int>(r.u32());
      r.u32();  // class size, recoverable from the manifest
      s.class_left_(c, d) = static_cast<int>(r.u32());
      s.class_right_(c, d) = static_cast<int>(r.u32());
    }
  }
  {
    s.validation_ = ValidationMatrix::from_manifest(s.manifest_, dumps);
    const auto bytes = read_file(segment_path(dir, kClassImage));
    ByteReader r(bytes, "class_image segment");
    const auto rows = open_segment(r, kClassImage);
    const auto images = s.manifest_.images.size();
    std::vector<std::vector<std::uint8_t>> correct(static_cast<std::size_t>(dumps), std::vector<std::uint8_t>(images));
    std::vector<std::vector<std::int32_t>> labels(static_cast<std::size_t>(dumps), std::vector<std::int32_t>(images, -1));
    bool any_label = false;
    for (std::uint64_t i = 0; i < rows; ++i) {
      const auto img = r.u32();
      r.u32();  // class
      const auto d = r.u32();
      if (img >= images || d >= static_cast<std::uint32_t>(dumps)) throw FormatError("class_image segment: row out of range");
      correct[d][img] = r.u8();
      labels[d][img] = static_cast<std::int32_t>(r.u32());
      any_label = any_label || labels[d][img] >= 0;
    }
    for (int d = 0; d < dumps; ++d)
      s.validation_.set_dump(d, correct[static_cast<std::size_t>(d)],
                             any_label ? std::span<const std::int32_t>(labels[static_cast<std::size_t>(d)])
                                       : std::span<const std::int32_t>{});
  }
  s.sealed_ = true;
  return s;
}

// StoreWriter

StoreWriter::StoreWriter(fs::path dir, RunManifest manifest, StoreOptions options)
    : dir_(std::move(dir)), source_manifest_(std::move(manifest)), options_(options) {
  source_manifest_.validate();
  if (options_.anomaly_window < 1) throw InvalidArgument("anomaly window must be >= 1");
  store_.dir_ = dir_;
  store_.manifest_ = source_manifest_;
  store_.hierarchy_ = build_hierarchy(source_manifest_);
  store_.window_ = options_.anomaly_window;
  store_.raw_retained_ = options_.retain_raw;
  if (fs::exists(dir_ / "meta.json"))
    throw FormatError("store " + dir_.string() + " is already sealed; refusing to overwrite");
  fs::create_directories(dir_ / "segments");
}

void StoreWriter::record_gap(std::int64_t iteration, std::string reason) {
  store_.gaps_.push_back({iteration, std::move(reason)});
}

void StoreWriter::add_dump(std::int64_t iteration, WeightDump weights, const ValidationDump& validation) {
  if (!iterations_.empty() && iteration <= iterations_.back())
    throw FormatError("dump iterations must be strictly increasing");
  const auto& h = store_.hierarchy_;
  check_against(weights, h);
  if (validation.correct.size() != source_manifest_.images.size())
    throw FormatError("validation dump at iteration " + std::to_string(iteration) +
                      " does not cover every image");
  weights.iteration = iteration;

  if (options_.retain_raw) {
    write_file(weight_dump_path(dir_ / "raw", iteration), write_weight_dump(weights));
    write_file(validation_dump_path(dir_ / "raw", iteration), write_validation_dump(validation));
  }

  std::vector<NodeStatRow> rows(h.nodes().size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t n = 0; n < rows.size(); ++n) {
    auto& row = rows[n];
    const int node = static_cast<int>(n);
    if (h.leaves_under(node).empty()) {
      row.mean = row.sd = row.min = row.max = row.update_ratio = nan;
      continue;
    }
    const auto st = aggregate_stats(h, node, weights);
    row.mean = st.mean;
    row.sd = st.sd;
    row.sum = st.sum;
    row.min = st.min;
    row.max = st.max;
    row.count = st.count;
    row.nonfinite = st.nonfinite;
    row.update_ratio = previous_ ? aggregate_update_ratio(h, node, *previous_, weights).value_or(nan) : nan;
  }
  stats_by_dump_.push_back(std::move(rows));

  if (previous_) {
    std::vector<Eigen::VectorXd> column;
    for (int leaf : h.leaves()) {
      const auto& id = h.node(leaf).id;
      column.push_back(filter_changes(previous_->layer(id).filters, weights.layer(id).filters));
    }
    changes_by_column_.push_back(std::move(column));
  }

  store_.nonfinite_ += weights.nonfinite_count;
  correct_by_dump_.push_back(validation.correct);
  labels_by_dump_.push_back(validation.labels);
  iterations_.push_back(iteration);
  previous_ = std::move(weights);
}

RunStore StoreWriter::seal() {
  if (iterations_.size() < 2)
    throw FormatError("at least two dumps are required (change degrees need consecutive pairs)");
  RunStore& s = store_;
  const auto& h = s.hierarchy_;
  const int dumps = static_cast<int>(iterations_.size());
  const int cols = dumps - 1;
  const int nodes = static_cast<int>(h.nodes().size());
  s.manifest_.dump_iterations = iterations_;

  s.node_stats_.resize(static_cast<std::size_t>(nodes) * static_cast<std::size_t>(dumps));
  for (int n = 0; n < nodes; ++n)
    for (int d = 0; d < dumps; ++d)
      s.node_stats_[static_cast<std::size_t>(n) * static_cast<std::size_t>(dumps) + static_cast<std::size_t>(d)] =
          stats_by_dump_[static_cast<std::size_t>(d)][static_cast<std::size_t>(n)];

  const auto& leaves = h.leaves();
  s.changes_.clear();
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Eigen::MatrixXd m(h.node(leaves[l]).filter_count, cols);
    for (int c = 0; c < cols; ++c) m.col(c) = changes_by_column_[static_cast<std::size_t>(c)][l];
    s.changes_.push_back(std::move(m));
  }

  s.rankings_.assign(static_cast<std::size_t>(cols), {});
  for (int c = 0; c < cols; ++c) {
    auto& ranking = s.rankings_[static_cast<std::size_t>(c)];
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      const auto& m = s.changes_[l];
      for (Eigen::Index f = 0; f < m.rows(); ++f)
        ranking.push_back({static_cast<int>(l), static_cast<int>(f), m(f, c)});
    }
    std::sort(ranking.begin(), ranking.end(), ranks_before);
  }

  s.validation_ = ValidationMatrix::from_manifest(s.manifest_, dumps);
  for (int d = 0; d < dumps; ++d)
    s.validation_.set_dump(d, correct_by_dump_[static_cast<std::size_t>(d)],
                           labels_by_dump_[static_cast<std::size_t>(d)]);
  compute_class_tables(s.validation_, s.window_, s.class_wrong_, s.class_left_, s.class_right_);

  // Persist.
  save_manifest(s.manifest_, (dir_ / "manifest.json").string());

  SegmentBuilder ls(kLayerStat);
  for (int n = 0; n < nodes; ++n)
    for (int d = 0; d < dumps; ++d) {
      const auto& row = s.node_stats_[static_cast<std::size_t>(n) * static_cast<std::size_t>(dumps) + static_cast<std::size_t>(d)];
      auto& w = ls.row();
      w.u32(static_cast<std::uint32_t>(n));
      w.u32(static_cast<std::uint32_t>(d));
      w.f64(row.mean);
      w.f64(row.sd);
      w.f64(row.sum);
      w.f64(row.min);
      w.f64(row.max);
      w.f64(row.update_ratio);
      w.u64(row.count);
      w.u64(row.nonfinite);
    }
  write_file(segment_path(dir_, kLayerStat), ls.finish());

  SegmentBuilder lf(kLayerFilter);
  for (std::size_t l = 0; l < s.changes_.size(); ++l) {
    const auto& m = s.changes_[l];
    for (Eigen::Index f = 0; f < m.rows(); ++f)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        auto& w = lf.row();
        w.u32(static_cast<std::uint32_t>(l));
        w.u32(static_cast<std::uint32_t>(f));
        w.u32(static_cast<std::uint32_t>(c));
        w.f64(m(f, c));
      }
  }
  write_file(segment_path(dir_, kLayerFilter), lf.finish());

  SegmentBuilder itf(kIterFilter);
  for (std::size_t c = 0; c < s.rankings_.size(); ++c)
    for (std::size_t rank = 0; rank < s.rankings_[c].size(); ++rank) {
      const auto& rf = s.rankings_[c][rank];
      auto& w = itf.row();
      w.u32(static_cast<std::uint32_t>(c));
      w.u32(static_cast<std::uint32_t>(rank));
      w.u32(static_cast<std::uint32_t>(rf.layer_ordinal));
      w.u32(static_cast<std::uint32_t>(rf.filter));
      w.f64(rf.change);
    }
  write_file(segment_path(dir_, kIterFilter), itf.finish());

  SegmentBuilder cs(kClassStat);
  for (int c = 0; c < s.validation_.class_count(); ++c)
    for (int d = 0; d < dumps; ++d) {
      auto& w = cs.row();
      w.u32(static_cast<std::uint32_t>(c));
      w.u32(static_cast<std::uint32_t>(d));
      w.u32(static_cast<std::uint32_t>(s.class_wrong_(c, d)));
      w.u32(static_cast<std::uint32_t>(s.validation_.class_images(c).size()));
      w.u32(static_cast<std::uint32_t>(s.class_left_(c, d)));
      w.u32(static_cast<std::uint32_t>(s.class_right_(c, d)));
    }
  write_file(segment_path(dir_, kClassStat), cs.finish());

  SegmentBuilder ci(kClassImage);
  for (int img = 0; img < s.validation_.image_count(); ++img) {
    auto seq = s.validation_.sequence(img);
    for (int d = 0; d < dumps; ++d) {
      auto& w = ci.row();
      w.u32(static_cast<std::uint32_t>(img));
      w.u32(static_cast<std::uint32_t>(s.validation_.class_of(img)));
      w.u32(static_cast<std::uint32_t>(d));
      w.u8(seq[static_cast<std::size_t>(d)]);
      w.u32(static_cast<std::uint32_t>(s.validation_.label(img, d)));
    }
  }
  write_file(segment_path(dir_, kClassImage), ci.finish());

  s.checksum_ = store_checksum(dir_);
  json meta{{"format_version", kStoreFormatVersion},
            {"run_id", s.manifest_.run_id},
            {"anomaly_window", s.window_},
            {"raw_retained", s.raw_retained_},
            {"nonfinite_weights", s.nonfinite_},
            {"seal_checksum", hex64(s.checksum_)}};
  json gaps = json::array();
  for (const auto& g : s.gaps_) gaps.push_back({{"iteration", g.iteration}, {"reason", g.reason}});
  meta["gaps"] = std::move(gaps);
  json segs = json::object();
  for (const auto& spec : kSegments)
    segs[std::string(spec.name)] = {{"file", "segments/" + std::string(spec.name) + ".seg"},
                                    {"tag", std::string(spec.tag)},
                                    {"row_width", spec.row_width}};
  meta["segments"] = std::move(segs);
  write_file(dir_ / "meta.json", json_bytes(meta));

  s.sealed_ = true;
  previous_.reset();
  stats_by_dump_.clear();
  changes_by_column_.clear();
  correct_by_dump_.clear();
  labels_by_dump_.clear();
  return std::move(store_);
}

}  // namespace trainscope
