#include "pcx/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pcx/error.hpp"

namespace pcx {

namespace {

constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeF32 = 0x01;
constexpr std::size_t kHeaderFixed = 7;  // magic + version + dtype + ndim

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

[[noreturn]] void malformed(const std::string& origin, std::size_t offset, const std::string& what) {
  throw InputError(origin + ": malformed PCXT at byte offset " + std::to_string(offset) + ": " + what);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {
  for (auto d : shape_)
    if (d == 0) throw InputError("tensor shape " + shape_str(shape_) + " has a zero extent");
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw InputError("tensor shape " + shape_str(shape_) + " has a zero extent");
  if (data_.size() != shape_numel(shape_))
    throw InputError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw InputError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::vector<std::uint8_t> encode_pcxt(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderFixed + 8 * t.rank() + 4 * t.size());
  out.insert(out.end(), {'P', 'C', 'X', 'T', kVersion, kDtypeF32, static_cast<std::uint8_t>(t.rank())});
  for (auto d : t.shape()) put_u64(out, d);
  for (float v : t.data()) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

Tensor decode_pcxt(std::span<const std::uint8_t> b, const std::string& origin) {
  if (b.size() < kHeaderFixed) malformed(origin, b.size(), "truncated header");
  if (std::memcmp(b.data(), "PCXT", 4) != 0) malformed(origin, 0, "bad magic");
  if (b[4] != kVersion) malformed(origin, 4, "unsupported version " + std::to_string(b[4]));
  if (b[5] != kDtypeF32) malformed(origin, 5, "unsupported dtype " + std::to_string(b[5]));
  const std::size_t ndim = b[6];
  if (ndim == 0) malformed(origin, 6, "zero-rank tensor");
  std::size_t off = kHeaderFixed;
  if (b.size() < off + 8 * ndim) malformed(origin, b.size(), "truncated dims");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i, off += 8) {
    auto d = get_u64(b, off);
    if (d == 0) malformed(origin, off, "zero dimension");
    shape[i] = static_cast<std::size_t>(d);
  }
  const std::size_t n = shape_numel(shape);
  if (b.size() != off + 4 * n)
    malformed(origin, std::min(b.size(), off + 4 * n),
              "payload is " + std::to_string(b.size() - off) + " bytes, expected " + std::to_string(4 * n));
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, off += 4) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(b[off + k]) << (8 * k);
    data[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(data[i])) malformed(origin, off, "non-finite value");
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_pcxt(read_file_bytes(path), path.string()); }

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_pcxt(t)); }

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace pcx
