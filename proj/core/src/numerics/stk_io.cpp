#include "eegscribe/numerics/stk_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eegscribe/errors.hpp"

namespace eegscribe::nx {

namespace {

static_assert(std::endian::native == std::endian::little, "STK1 I/O assumes a little-endian host");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_stk(const Tensor& t) {
  if (t.rank() > 255) throw DimensionError("STK1: rank exceeds 255");
  std::vector<std::uint8_t> out{'S', 'T', 'K', '1', kStkVersion, kStkFloat64, static_cast<std::uint8_t>(t.rank())};
  for (auto e : t.shape()) put_u64(out, e);
  const std::size_t header = out.size();
  out.resize(header + t.numel() * sizeof(double));
  if (t.numel()) std::memcpy(out.data() + header, t.data().data(), t.numel() * sizeof(double));
  return out;
}

Tensor decode_stk(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), "STK1", 4) != 0) throw IoError("STK1: bad magic");
  if (bytes[4] != kStkVersion) throw IoError("STK1: unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] != kStkFloat64) throw IoError("STK1: unsupported dtype code " + std::to_string(bytes[5]));
  const std::size_t ndim = bytes[6];
  const std::size_t header = 7 + 8 * ndim;
  if (bytes.size() < header) throw IoError("STK1: truncated header");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = get_u64(bytes.data() + 7 + 8 * i);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != header + n * sizeof(double)) throw IoError("STK1: payload size does not match extents");
  std::vector<double> data(n);
  if (n) std::memcpy(data.data(), bytes.data() + header, n * sizeof(double));
  return Tensor(std::move(shape), std::move(data));
}

void write_stk(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_stk(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Tensor read_stk(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_stk(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace eegscribe::nx
