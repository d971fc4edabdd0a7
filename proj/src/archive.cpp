#include "tfgu/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <zlib.h>

#include "tfgu/bytes.hpp"

namespace tfgu {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'G', 'U'};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 2; }

}  // namespace

double round_to(DType dtype, double v) {
  if (dtype == DType::f32) return static_cast<double>(static_cast<float>(v));
  return static_cast<double>(static_cast<float>(Eigen::half(static_cast<float>(v))));
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Matrix Tensor::as_matrix() const {
  Eigen::Index rows = 1, cols = 1;
  if (shape.size() == 1) {
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    throw ShapeError("tensor '" + name + "' is not rank 1 or 2");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[r * cols + c];
  return m;
}

void WeightArchive::add(std::string name, std::vector<std::int64_t> shape,
                        std::span<const double> values, DType dtype) {
  if (find(name)) throw FormatError("duplicate tensor name '" + name + "'");
  Tensor t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.shape = std::move(shape);
  if (t.numel() != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor '" + t.name + "': value count does not match shape");
  }
  t.values.reserve(values.size());
  for (double v : values) t.values.push_back(round_to(dtype, v));
  tensors_.push_back(std::move(t));
}

void WeightArchive::add(std::string name, const Matrix& m, DType dtype) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[r * m.cols() + c] = m(r, c);
  add(std::move(name), {m.rows(), m.cols()}, v, dtype);
}

const Tensor* WeightArchive::find(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

const Tensor& WeightArchive::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw NotFoundError("archive has no tensor '" + std::string(name) + "'");
}

std::vector<std::uint8_t> WeightArchive::to_bytes() const {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  std::uint64_t offset = 0;
  for (const auto& t : tensors_) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    w.u64(offset);
    offset += t.values.size() * dtype_size(t.dtype);
  }
  w.u64(offset);
  for (const auto& t : tensors_) {
    for (double v : t.values) {
      if (t.dtype == DType::f32) {
        w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.u16(to_half_bits(v));
      }
    }
  }
  return w.take();
}

WeightArchive WeightArchive::from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad archive magic");
  const auto version = r.u32();
  if (version != kVersion) throw FormatError("unsupported archive version " + std::to_string(version));
  const auto count = r.u32();

  struct Entry {
    Tensor t;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = r.u32();
    auto name = r.take(len);
    e.t.name.assign(name.begin(), name.end());
    if (!names.insert(e.t.name).second) throw FormatError("duplicate tensor name '" + e.t.name + "'");
    const auto dt = r.u8();
    if (dt > 1) throw FormatError("tensor '" + e.t.name + "': unknown dtype");
    e.t.dtype = static_cast<DType>(dt);
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("tensor '" + e.t.name + "': rank too large");
    for (std::uint32_t k = 0; k < rank; ++k) e.t.shape.push_back(static_cast<std::int64_t>(r.u64()));
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  const auto payload_size = r.u64();
  if (payload_size != r.remaining()) throw FormatError("archive payload length mismatch");
  auto payload = r.take(payload_size);

  // offsets must be in-bounds and non-overlapping
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& e : entries) {
    const std::uint64_t n = static_cast<std::uint64_t>(e.t.numel()) * dtype_size(e.t.dtype);
    if (e.offset > payload_size || n > payload_size - e.offset) {
      throw FormatError("tensor '" + e.t.name + "' lies outside the payload");
    }
    spans.emplace_back(e.offset, e.offset + n);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) throw FormatError("overlapping tensor data");
  }

  WeightArchive out;
  for (auto& e : entries) {
    const auto n = static_cast<std::size_t>(e.t.numel());
    ByteReader pr(payload.subspan(e.offset, n * dtype_size(e.t.dtype)));
    e.t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (e.t.dtype == DType::f32) {
        e.t.values[i] = std::bit_cast<float>(pr.u32());
      } else {
        e.t.values[i] = from_half_bits(pr.u16());
      }
    }
    out.tensors_.push_back(std::move(e.t));
  }
  return out;
}

void WeightArchive::save(const std::filesystem::path& path) const { write_file(path, to_bytes()); }

WeightArchive WeightArchive::load(const std::filesystem::path& path) {
  return from_bytes(read_file(path));
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  c = ::crc32(c, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace tfgu
