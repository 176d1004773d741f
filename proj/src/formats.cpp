#include "trainscope/formats.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "trainscope/error.hpp"
#include "trainscope/model.hpp"

namespace trainscope {

namespace {
constexpr std::string_view kWeightMagic = "DTWT";
constexpr std::string_view kValidationMagic = "DTVL";
}  // namespace

// ByteReader / ByteWriter

void ByteReader::need(std::size_t n, std::string_view field) const {
  if (remaining() < n)
    throw FormatError(what_ + ": truncated payload reading " + std::string(field) + " at byte " +
                      std::to_string(pos_));
}

void ByteReader::expect_magic(std::string_view magic) {
  need(magic.size(), "magic");
  if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0)
    throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
  pos_ += magic.size();
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint16_t ByteReader::u16() {
  need(2, "u16");
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_ + i]) << (8 * i));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::byte> ByteReader::take(std::size_t n) {
  need(n, "bytes");
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

void ByteWriter::magic(std::string_view m) {
  for (char c : m) out_.push_back(static_cast<std::byte>(c));
}
void ByteWriter::u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}
void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}
void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}
void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::raw(std::span<const std::byte> b) { out_.insert(out_.end(), b.begin(), b.end()); }

// Weight dumps

const LayerWeights* WeightDump::find(std::string_view layer_id) const {
  for (const auto& l : layers)
    if (l.layer_id == layer_id) return &l;
  return nullptr;
}

const LayerWeights& WeightDump::layer(std::string_view layer_id) const {
  if (const auto* l = find(layer_id)) return *l;
  throw NotFound("weight dump has no layer '" + std::string(layer_id) + "'");
}

std::size_t WeightDump::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.filters.size());
  return n;
}

WeightDump read_weight_dump(std::span<const std::byte> bytes) {
  ByteReader r(bytes, "weight dump");
  r.expect_magic(kWeightMagic);
  WeightDump dump;
  dump.version = r.u32();
  if (dump.version != kDumpFormatVersion)
    throw FormatError("weight dump: unsupported version " + std::to_string(dump.version));
  const std::uint32_t layer_count = r.u32();
  dump.layers.reserve(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    LayerWeights lw;
    const std::uint16_t id_len = r.u16();
    auto id = r.take(id_len);
    lw.layer_id.assign(reinterpret_cast<const char*>(id.data()), id.size());
    const std::uint32_t filters = r.u32();
    const std::uint32_t per_filter = r.u32();
    const std::size_t count = static_cast<std::size_t>(filters) * per_filter;
    if (r.remaining() / 4 < count)
      throw FormatError("weight dump: truncated payload in layer '" + lw.layer_id + "' (declared " +
                        std::to_string(filters) + " filters of " + std::to_string(per_filter) +
                        " weights)");
    lw.filters.resize(filters, per_filter);
    float* out = lw.filters.data();
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = r.f32();
      if (!std::isfinite(out[i])) ++dump.nonfinite_count;
    }
    dump.layers.push_back(std::move(lw));
  }
  if (r.remaining() != 0)
    throw FormatError("weight dump: " + std::to_string(r.remaining()) + " trailing bytes");
  return dump;
}

void check_against(const WeightDump& dump, const NetworkHierarchy& network) {
  std::set<std::string> seen;
  for (const auto& l : dump.layers) {
    auto idx = network.find(l.layer_id);
    if (!idx || network.node(*idx).kind != NodeKind::Layer)
      throw FormatError("weight dump: layer '" + l.layer_id + "' is not in the manifest");
    if (!seen.insert(l.layer_id).second)
      throw FormatError("weight dump: layer '" + l.layer_id + "' appears twice");
    const auto& node = network.node(*idx);
    if (l.filters.rows() != node.filter_count || l.filters.cols() != node.weights_per_filter)
      throw FormatError("weight dump: layer '" + l.layer_id + "' has " +
                        std::to_string(l.filters.rows()) + "x" + std::to_string(l.filters.cols()) +
                        " weights, manifest declares " + std::to_string(node.filter_count) + "x" +
                        std::to_string(node.weights_per_filter));
  }
  if (seen.size() != network.leaves().size())
    throw FormatError("weight dump: has " + std::to_string(seen.size()) + " layers, manifest declares " +
                      std::to_string(network.leaves().size()));
}

WeightDump read_weight_dump(std::span<const std::byte> bytes, const NetworkHierarchy& network) {
  auto dump = read_weight_dump(bytes);
  check_against(dump, network);
  return dump;
}

std::vector<std::byte> write_weight_dump(const WeightDump& dump) {
  ByteWriter w;
  w.bytes().reserve(12 + dump.weight_count() * 4 + dump.layers.size() * 32);
  w.magic(kWeightMagic);
  w.u32(dump.version);
  w.u32(static_cast<std::uint32_t>(dump.layers.size()));
  for (const auto& l : dump.layers) {
    if (l.layer_id.size() > 0xFFFF) throw InvalidArgument("layer id too long");
    w.u16(static_cast<std::uint16_t>(l.layer_id.size()));
    w.raw(std::as_bytes(std::span(l.layer_id.data(), l.layer_id.size())));
    w.u32(static_cast<std::uint32_t>(l.filters.rows()));
    w.u32(static_cast<std::uint32_t>(l.filters.cols()));
    const float* p = l.filters.data();
    for (Eigen::Index i = 0; i < l.filters.size(); ++i) w.f32(p[i]);
  }
  return w.release();
}

// Validation dumps

ValidationDump read_validation_dump(std::span<const std::byte> bytes,
                                    std::optional<std::size_t> expected_images) {
  ByteReader r(bytes, "validation dump");
  r.expect_magic(kValidationMagic);
  ValidationDump dump;
  dump.version = r.u32();
  if (dump.version != kDumpFormatVersion)
    throw FormatError("validation dump: unsupported version " + std::to_string(dump.version));
  const std::uint32_t images = r.u32();
  if (expected_images && *expected_images != images)
    throw FormatError("validation dump: bitmap covers " + std::to_string(images) +
                      " images, manifest declares " + std::to_string(*expected_images));
  auto bitmap = r.take((images + 7) / 8);
  dump.correct.resize(images);
  for (std::uint32_t i = 0; i < images; ++i)
    dump.correct[i] = (static_cast<std::uint8_t>(bitmap[i / 8]) >> (i % 8)) & 1U;
  const std::uint8_t has_labels = r.u8();
  if (has_labels > 1) throw FormatError("validation dump: has_labels must be 0 or 1");
  if (has_labels) {
    dump.labels.resize(images);
    for (std::uint32_t i = 0; i < images; ++i) dump.labels[i] = r.u16();
  }
  if (r.remaining() != 0)
    throw FormatError("validation dump: " + std::to_string(r.remaining()) + " trailing bytes");
  return dump;
}

std::vector<std::byte> write_validation_dump(const ValidationDump& dump) {
  if (!dump.labels.empty() && dump.labels.size() != dump.correct.size())
    throw InvalidArgument("label count must equal image count");
  ByteWriter w;
  w.magic(kValidationMagic);
  w.u32(dump.version);
  const auto images = static_cast<std::uint32_t>(dump.correct.size());
  w.u32(images);
  std::vector<std::uint8_t> bitmap((images + 7) / 8, 0);
  for (std::uint32_t i = 0; i < images; ++i)
    if (dump.correct[i]) bitmap[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
  for (auto b : bitmap) w.u8(b);
  w.u8(dump.labels.empty() ? 0 : 1);
  for (auto l : dump.labels) {
    if (l < 0 || l > 0xFFFF) throw InvalidArgument("label out of u16 range");
    w.u16(static_cast<std::uint16_t>(l));
  }
  return w.release();
}

// Files

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("short read on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write on " + path.string());
}

std::filesystem::path weight_dump_path(const std::filesystem::path& run_dir, std::int64_t iteration) {
  return run_dir / "weights" / ("iter_" + std::to_string(iteration) + ".bin");
}

std::filesystem::path validation_dump_path(const std::filesystem::path& run_dir, std::int64_t iteration) {
  return run_dir / "validation" / ("iter_" + std::to_string(iteration) + ".bin");
}

}  // namespace trainscope
