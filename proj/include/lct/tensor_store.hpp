#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lct {

enum class DType { F32, F16, BF16 };

std::size_t dtype_size(DType dtype) noexcept;
std::string_view dtype_name(DType dtype) noexcept;
/// Throws Error(MalformedHeader) for unknown names (quantized types included).
DType parse_dtype(std::string_view name);

/// Raw little-endian tensor. Byte length always equals numel * dtype_size.
class Tensor {
 public:
  Tensor() = default;
  Tensor(DType dtype, std::vector<std::uint64_t> shape, std::vector<std::byte> data);

  /// Narrows each value to `dtype` with round-to-nearest-even.
  static Tensor from_values(DType dtype, std::vector<std::uint64_t> shape,
                            std::span<const double> values);

  DType dtype() const noexcept { return dtype_; }
  const std::vector<std::uint64_t>& shape() const noexcept { return shape_; }
  std::span<const std::byte> bytes() const noexcept { return data_; }
  std::size_t numel() const noexcept;

  double value(std::size_t index) const;
  std::vector<double> to_f64() const;

  bool operator==(const Tensor&) const = default;

 private:
  DType dtype_ = DType::F32;
  std::vector<std::uint64_t> shape_;
  std::vector<std::byte> data_;
};

std::size_t element_count(std::span<const std::uint64_t> shape) noexcept;

struct ValidationReport {
  std::size_t nan_count = 0;
  std::size_t inf_count = 0;
  bool ok() const noexcept { return nan_count == 0 && inf_count == 0; }
};

ValidationReport validate(const Tensor& tensor);

/// Named tensors plus string metadata. std::map keeps names lexicographic.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  bool operator==(const Checkpoint&) const = default;
};

ValidationReport validate(const Checkpoint& ckpt);

/// Container encoding: u64 LE header length, JSON header, raw tensor bytes.
std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes);

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

using ElementCombiner = std::function<double(double, double)>;

/// Applies `combine` elementwise in F64 and narrows back to each tensor's dtype.
/// Metadata is taken from `a`.
Checkpoint tensor_map_binary(const Checkpoint& a, const Checkpoint& b, const ElementCombiner& combine);

/// Throws NameSetMismatch / ShapeMismatch when the two checkpoints cannot be combined.
void require_compatible(const Checkpoint& a, const Checkpoint& b);

}  // namespace lct
