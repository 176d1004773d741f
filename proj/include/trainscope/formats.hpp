#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace trainscope {

class NetworkHierarchy;

// Binary dump layouts, all little-endian:
//
//   weights/iter_<N>.bin
//     "DTWT" | version u32 | layer_count u32
//     per layer: id_len u16 | id bytes | filter_count u32 | weights_per_filter u32
//                | filter_count * weights_per_filter f32
//
//   validation/iter_<N>.bin
//     "DTVL" | version u32 | image_count u32 | ceil(image_count / 8) bitmap bytes
//     (LSB-first, bit i = image i) | has_labels u8 | [image_count * u16 labels]
//
// Only version 1 is understood.

inline constexpr std::uint32_t kDumpFormatVersion = 1;

/// Filters are rows, weights within a filter are columns.
using FilterWeights = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerWeights {
  std::string layer_id;
  FilterWeights filters;
};

struct WeightDump {
  std::uint32_t version = kDumpFormatVersion;
  std::int64_t iteration = -1;
  /// In file order; not necessarily network order.
  std::vector<LayerWeights> layers;
  /// NaN/Inf values encountered while parsing.
  std::size_t nonfinite_count = 0;

  const LayerWeights* find(std::string_view layer_id) const;
  /// Throws NotFound.
  const LayerWeights& layer(std::string_view layer_id) const;
  std::size_t weight_count() const;
};

struct ValidationDump {
  std::uint32_t version = kDumpFormatVersion;
  std::int64_t iteration = -1;
  std::vector<std::uint8_t> correct;  // one 0/1 entry per image
  std::vector<std::int32_t> labels;   // empty when the dump has none
};

WeightDump read_weight_dump(std::span<const std::byte> bytes);
/// Parses and additionally checks layer set and shapes against the network.
WeightDump read_weight_dump(std::span<const std::byte> bytes, const NetworkHierarchy& network);
void check_against(const WeightDump& dump, const NetworkHierarchy& network);
std::vector<std::byte> write_weight_dump(const WeightDump& dump);

ValidationDump read_validation_dump(std::span<const std::byte> bytes,
                                    std::optional<std::size_t> expected_images = std::nullopt);
std::vector<std::byte> write_validation_dump(const ValidationDump& dump);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

std::filesystem::path weight_dump_path(const std::filesystem::path& run_dir, std::int64_t iteration);
std::filesystem::path validation_dump_path(const std::filesystem::path& run_dir, std::int64_t iteration);

/// Sequential little-endian reader that throws FormatError on truncation.
class ByteReader {
 public:
  ByteReader(std::span<const std::byte> bytes, std::string_view what) : bytes_(bytes), what_(what) {}

  void expect_magic(std::string_view magic);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::span<const std::byte> take(std::size_t n);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, std::string_view field) const;

  std::span<const std::byte> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(std::string_view m);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::byte> b);

  std::vector<std::byte>& bytes() { return out_; }
  std::vector<std::byte> release() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

}  // namespace trainscope
