#pragma once

// Flat binary tensor container ("TFGU" archive).
//
// Layout, all integers little-endian:
//   magic      4 bytes  "TFGU"
//   version    u32      (currently 1)
//   count      u32      number of tensors
//   table      count × { name_len u32, name bytes, dtype u8 (0 = f32, 1 = f16),
//                        rank u32, dims rank × u64, offset u64 }
//   payload    u64 byte length, then the tensor data
// Offsets are relative to the first payload byte. Tensor data is stored
// row-major (last dimension fastest).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfgu/common.hpp"

namespace tfgu {

enum class DType : std::uint8_t { f32 = 0, f16 = 1 };

struct Tensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  /// Decoded values; already rounded to the storage precision.
  std::vector<double> values;

  std::int64_t numel() const;
  /// Interprets a rank-2 (or rank-1 as a single row) tensor as a matrix.
  Matrix as_matrix() const;
};

class WeightArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  /// Adds a tensor; values are rounded to `dtype` on insertion.
  void add(std::string name, std::vector<std::int64_t> shape, std::span<const double> values,
           DType dtype = DType::f32);
  void add(std::string name, const Matrix& m, DType dtype = DType::f32);

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::vector<std::uint8_t> to_bytes() const;
  static WeightArchive from_bytes(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static WeightArchive load(const std::filesystem::path& path);

 private:
  std::vector<Tensor> tensors_;
};

/// Rounds through the storage type so stored values are fixed points.
double round_to(DType dtype, double v);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tfgu
