#include "lct/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lct/error.hpp"
#include "lct/half.hpp"

static_assert(std::endian::native == std::endian::little, "tensor bytes are handled as native little-endian");

namespace lct {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMetadataKey = "__metadata__";

template <typename T>
T load_raw(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store_raw(std::byte* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

void store_value(DType dtype, std::byte* p, double v) {
  switch (dtype) {
    case DType::F32: store_raw(p, static_cast<float>(v)); break;
    case DType::F16: store_raw(p, double_to_f16(v)); break;
    case DType::BF16: store_raw(p, double_to_bf16(v)); break;
  }
}

std::uint64_t read_u64_le(std::span<const std::byte> bytes) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint64_t>(bytes[i]);
  return v;
}

std::string describe(const std::set<std::string>& names) {
  std::string out = "{";
  for (const auto& n : names) {
    if (out.size() > 1) out += ", ";
    out += '"' + n + '"';
  }
  return out + "}";
}

}  // namespace

std::size_t dtype_size(DType dtype) noexcept { return dtype == DType::F32 ? 4 : 2; }

std::string_view dtype_name(DType dtype) noexcept {
  switch (dtype) {
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
  }
  return "?";
}

DType parse_dtype(std::string_view name) {
  if (name == "F32") return DType::F32;
  if (name == "F16") return DType::F16;
  if (name == "BF16") return DType::BF16;
  throw Error(ErrorKind::MalformedHeader, "unsupported dtype '" + std::string(name) + "'");
}

std::size_t element_count(std::span<const std::uint64_t> shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor::Tensor(DType dtype, std::vector<std::uint64_t> shape, std::vector<std::byte> data)
    : dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_) * dtype_size(dtype_)) {
    throw Error(ErrorKind::ShapeMismatch, "tensor byte length " + std::to_string(data_.size()) +
                                              " does not match shape and dtype");
  }
}

Tensor Tensor::from_values(DType dtype, std::vector<std::uint64_t> shape, std::span<const double> values) {
  if (values.size() != element_count(shape)) {
    throw Error(ErrorKind::ShapeMismatch, "value count does not match shape");
  }
  std::vector<std::byte> data(values.size() * dtype_size(dtype));
  for (std::size_t i = 0; i < values.size(); ++i) store_value(dtype, data.data() + i * dtype_size(dtype), values[i]);
  return Tensor(dtype, std::move(shape), std::move(data));
}

std::size_t Tensor::numel() const noexcept { return element_count(shape_); }

double Tensor::value(std::size_t index) const {
  const std::byte* p = data_.data() + index * dtype_size(dtype_);
  switch (dtype_) {
    case DType::F32: return load_raw<float>(p);
    case DType::F16: return f16_to_double(load_raw<std::uint16_t>(p));
    case DType::BF16: return bf16_to_double(load_raw<std::uint16_t>(p));
  }
  return 0.0;
}

std::vector<double> Tensor::to_f64() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(i);
  return out;
}

ValidationReport validate(const Tensor& tensor) {
  ValidationReport r;
  for (std::size_t i = 0; i < tensor.numel(); ++i) {
    const double v = tensor.value(i);
    if (std::isnan(v)) ++r.nan_count;
    else if (std::isinf(v)) ++r.inf_count;
  }
  return r;
}

ValidationReport validate(const Checkpoint& ckpt) {
  ValidationReport total;
  for (const auto& [name, t] : ckpt.tensors) {
    auto r = validate(t);
    total.nan_count += r.nan_count;
    total.inf_count += r.inf_count;
  }
  return total;
}

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name == kMetadataKey) throw Error(ErrorKind::MalformedHeader, "tensor name __metadata__ is reserved");
    const std::uint64_t end = offset + t.bytes().size();
    header[name] = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"data_offsets", {offset, end}}};
    offset = end;
  }
  if (!ckpt.metadata.empty()) header[std::string(kMetadataKey)] = ckpt.metadata;

  std::string text = header.dump();
  // Pad to 8-byte alignment so tensor data starts aligned.
  while ((text.size() % 8) != 0) text.push_back(' ');

  std::vector<std::byte> out;
  out.reserve(8 + text.size() + offset);
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((n >> (8 * i)) & 0xFF));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto& [name, t] : ckpt.tensors) out.insert(out.end(), t.bytes().begin(), t.bytes().end());
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes) {
  if (file_bytes.size() < 8) throw Error(ErrorKind::MalformedHeader, "file shorter than the 8-byte length prefix");
  const std::uint64_t header_len = read_u64_le(file_bytes.first(8));
  if (header_len > file_bytes.size() - 8) {
    throw Error(ErrorKind::MalformedHeader, "header length " + std::to_string(header_len) + " exceeds file size");
  }
  const auto header_bytes = file_bytes.subspan(8, header_len);
  const auto data = file_bytes.subspan(8 + header_len);

  json header;
  try {
    header = json::parse(reinterpret_cast<const char*>(header_bytes.data()),
                         reinterpret_cast<const char*>(header_bytes.data()) + header_bytes.size());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::MalformedHeader, std::string("header is not well-formed JSON: ") + e.what());
  }
  if (!header.is_object()) throw Error(ErrorKind::MalformedHeader, "header is not a JSON object");

  struct Entry {
    std::string name;
    DType dtype;
    std::vector<std::uint64_t> shape;
    std::uint64_t begin, end;
  };
  std::vector<Entry> entries;
  Checkpoint ckpt;

  for (const auto& [key, value] : header.items()) {
    if (key == kMetadataKey) {
      if (!value.is_object()) throw Error(ErrorKind::MalformedHeader, "__metadata__ must be an object");
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) throw Error(ErrorKind::MalformedHeader, "metadata value for '" + mk + "' is not a string");
        ckpt.metadata.emplace(mk, mv.get<std::string>());
      }
      continue;
    }
    try {
      Entry e{key, parse_dtype(value.at("dtype").get<std::string>()), value.at("shape").get<std::vector<std::uint64_t>>(),
              0, 0};
      const auto offsets = value.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1]) {
        throw Error(ErrorKind::MalformedHeader, "bad data_offsets for '" + key + "'");
      }
      e.begin = offsets[0];
      e.end = offsets[1];
      if (e.end - e.begin != element_count(e.shape) * dtype_size(e.dtype)) {
        throw Error(ErrorKind::MalformedHeader, "byte range of '" + key + "' does not match shape and dtype");
      }
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw Error(ErrorKind::MalformedHeader, "bad entry '" + key + "': " + ex.what());
    }
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  std::uint64_t cursor = 0;
  for (const auto& e : entries) {
    if (e.begin < cursor) throw Error(ErrorKind::OffsetOverlap, "tensor '" + e.name + "' overlaps its predecessor");
    if (e.begin > cursor) throw Error(ErrorKind::MalformedHeader, "gap before tensor '" + e.name + "'");
    if (e.end > data.size()) {
      throw Error(ErrorKind::TruncatedData, "tensor '" + e.name + "' ends at " + std::to_string(e.end) +
                                                " but only " + std::to_string(data.size()) + " data bytes exist");
    }
    cursor = e.end;
  }
  if (cursor != data.size()) {
    throw Error(ErrorKind::MalformedHeader, std::to_string(data.size() - cursor) + " trailing bytes after last tensor");
  }

  for (auto& e : entries) {
    std::vector<std::byte> bytes(data.begin() + static_cast<std::ptrdiff_t>(e.begin),
                                 data.begin() + static_cast<std::ptrdiff_t>(e.end));
    ckpt.tensors.emplace(e.name, Tensor(e.dtype, std::move(e.shape), std::move(bytes)));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(std::as_bytes(std::span(raw)));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "write to '" + path.string() + "' failed");
}

void require_compatible(const Checkpoint& a, const Checkpoint& b) {
  std::set<std::string> diff;
  for (const auto& [name, t] : a.tensors)
    if (!b.tensors.contains(name)) diff.insert(name);
  for (const auto& [name, t] : b.tensors)
    if (!a.tensors.contains(name)) diff.insert(name);
  if (!diff.empty()) throw Error(ErrorKind::NameSetMismatch, "tensor names differ: " + describe(diff));

  for (const auto& [name, ta] : a.tensors) {
    const auto& tb = b.tensors.at(name);
    if (ta.shape() != tb.shape() || ta.dtype() != tb.dtype()) {
      throw Error(ErrorKind::ShapeMismatch, "tensor '" + name + "' differs in shape or dtype");
    }
  }
}

Checkpoint tensor_map_binary(const Checkpoint& a, const Checkpoint& b, const ElementCombiner& combine) {
  require_compatible(a, b);
  Checkpoint out;
  out.metadata = a.metadata;
  for (const auto& [name, ta] : a.tensors) {
    const auto& tb = b.tensors.at(name);
    std::vector<double> values(ta.numel());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = combine(ta.value(i), tb.value(i));
    out.tensors.emplace(name, Tensor::from_values(ta.dtype(), ta.shape(), values));
  }
  return out;
}

}  // namespace lct
