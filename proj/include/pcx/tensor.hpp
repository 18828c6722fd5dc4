#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pcx {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array. Shapes are lists of positive extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor vector(std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 3-D [C,H,W] accessor.
  float& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  float at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// PCXT container: "PCXT", version 0x01, dtype 0x01 (f32 LE), ndim byte,
// ndim x u64 LE dims, row-major payload.
std::vector<std::uint8_t> encode_pcxt(const Tensor& t);
Tensor decode_pcxt(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);

/// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace pcx
