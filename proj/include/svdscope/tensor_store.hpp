#pragma once

// Single-file tensor container: an 8-byte little-endian header length, a
// JSON header mapping tensor names to {dtype, shape, data_offsets}, then the
// packed little-endian row-major payloads. Values are held as doubles in
// memory regardless of the on-disk dtype.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "svdscope/dtype.hpp"
#include "svdscope/error.hpp"
#include "svdscope/glob.hpp"

namespace svdscope {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;  // one or two dimensions
  DType source_dtype = DType::F64;
  std::vector<double> data;        // row-major

  [[nodiscard]] bool is_matrix() const { return shape.size() == 2; }
  [[nodiscard]] std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  [[nodiscard]] std::size_t cols() const { return shape.size() == 2 ? shape[1] : 1; }
  [[nodiscard]] std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

/// Layer index from a dotted name: the integer segment following "layers".
inline std::optional<int> layer_index(std::string_view name) {
  std::size_t pos = 0;
  std::string_view prev;
  while (pos <= name.size()) {
    std::size_t dot = name.find('.', pos);
    if (dot == std::string_view::npos) dot = name.size();
    const std::string_view seg = name.substr(pos, dot - pos);
    if (prev == "layers" && !seg.empty()) {
      int k = 0;
      auto [ptr, ec] = std::from_chars(seg.data(), seg.data() + seg.size(), k);
      if (ec == std::errc{} && ptr == seg.data() + seg.size()) return k;
    }
    prev = seg;
    pos = dot + 1;
  }
  return std::nullopt;
}

inline Matrix to_matrix(const TensorRecord& r) {
  if (!r.is_matrix()) throw ShapeError("tensor '" + r.name + "' is not a matrix");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      r.data.data(), static_cast<Eigen::Index>(r.rows()), static_cast<Eigen::Index>(r.cols()));
}

inline TensorRecord make_record(std::string name, const Matrix& m, DType dtype = DType::F64) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  r.source_dtype = dtype;
  r.data.resize(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      r.data.data(), m.rows(), m.cols()) = m;
  return r;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class Checkpoint {
 public:
  std::map<std::string, std::string> metadata;

  void add(TensorRecord record) {
    if (index_.contains(record.name)) {
      throw FormatError("duplicate tensor name '" + record.name + "'");
    }
    index_.insert(record.name);
    records_.push_back(std::move(record));
  }

  [[nodiscard]] const std::vector<TensorRecord>& records() const { return records_; }
  [[nodiscard]] std::size_t size() const { return records_.size(); }

  [[nodiscard]] const TensorRecord* find(std::string_view name) const {
    for (const auto& r : records_) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.metadata == b.metadata && a.records_ == b.records_;
  }

 private:
  std::vector<TensorRecord> records_;
  std::unordered_set<std::string> index_;
};

// --- decoding -------------------------------------------------------------

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8) throw FormatError("file shorter than the 8-byte header length field");
  const auto header_len = detail::load_le<std::uint64_t>(bytes.data());
  if (header_len > bytes.size() - 8) throw FormatError("header overruns file");
  const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);
  const std::span<const unsigned char> payload = bytes.subspan(8 + header_len);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("malformed header: not an object");

  struct Entry {
    std::string name;
    DType dtype;
    std::vector<std::size_t> shape;
    std::uint64_t begin, end;
  };
  std::vector<Entry> entries;
  Checkpoint ckpt;

  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") {
      if (!info.is_object()) throw FormatError("malformed header: __metadata__ is not an object");
      for (const auto& [k, v] : info.items()) {
        if (!v.is_string()) throw FormatError("malformed header: __metadata__['" + k + "'] is not a string");
        ckpt.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    const std::string where = "tensor '" + name + "'";
    if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") ||
        !info.contains("data_offsets")) {
      throw FormatError("malformed header: " + where + " lacks dtype/shape/data_offsets");
    }
    const auto& jd = info["dtype"];
    const auto dtype = jd.is_string() ? parse_dtype(jd.get<std::string>()) : std::nullopt;
    if (!dtype) throw FormatError(where + ": unsupported dtype " + jd.dump());
    Entry e{name, *dtype, {}, 0, 0};
    const auto& js = info["shape"];
    if (!js.is_array()) throw FormatError("malformed header: " + where + " shape is not an array");
    for (const auto& d : js) {
      if (!d.is_number_unsigned()) throw FormatError("malformed header: " + where + " shape entry " + d.dump());
      e.shape.push_back(d.get<std::size_t>());
    }
    if (e.shape.empty() || e.shape.size() > 2) {
      throw FormatError(where + ": unsupported rank " + std::to_string(e.shape.size()));
    }
    const auto& jo = info["data_offsets"];
    if (!jo.is_array() || jo.size() != 2 || !jo[0].is_number_unsigned() || !jo[1].is_number_unsigned()) {
      throw FormatError("malformed header: " + where + " data_offsets must be [begin, end]");
    }
    e.begin = jo[0].get<std::uint64_t>();
    e.end = jo[1].get<std::uint64_t>();
    if (e.begin > e.end || e.end > payload.size()) {
      throw FormatError(where + ": offsets out of bounds [" + std::to_string(e.begin) + ", " +
                        std::to_string(e.end) + ") for data region of " +
                        std::to_string(payload.size()) + " bytes");
    }
    std::uint64_t numel = 1;
    for (auto d : e.shape) numel *= d;
    if (numel * dtype_size(e.dtype) != e.end - e.begin) {
      throw FormatError(where + ": payload length " + std::to_string(e.end - e.begin) +
                        " does not match shape " + shape_string(e.shape));
    }
    entries.push_back(std::move(e));
  }

  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.begin < b.begin; });
  std::uint64_t cursor = 0;
  const Entry* prev = nullptr;
  for (const auto& e : entries) {
    if (e.begin < cursor) {
      throw FormatError("overlapping regions: tensor '" + e.name + "' overlaps tensor '" + prev->name + "'");
    }
    if (e.begin > cursor) throw FormatError("gap in data region before tensor '" + e.name + "'");
    cursor = e.end;
    prev = &e;
  }
  if (cursor != payload.size()) {
    throw FormatError("data region has " + std::to_string(payload.size() - cursor) + " unclaimed trailing bytes");
  }

  for (auto& e : entries) {
    TensorRecord r;
    r.name = e.name;
    r.shape = e.shape;
    r.source_dtype = e.dtype;
    const std::size_t width = dtype_size(e.dtype);
    const std::size_t n = (e.end - e.begin) / width;
    r.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = decode_element(e.dtype, payload.data() + e.begin + i * width);
      if (!std::isfinite(v)) {
        throw FormatError("tensor '" + e.name + "': non-finite value at element " + std::to_string(i));
      }
      r.data[i] = v;
    }
    ckpt.add(std::move(r));
  }
  return ckpt;
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// --- encoding -------------------------------------------------------------

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!ckpt.metadata.empty()) {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : ckpt.metadata) meta[k] = v;
    header["__metadata__"] = std::move(meta);
  }
  std::uint64_t offset = 0;
  for (const auto& r : ckpt.records()) {
    if (r.data.size() != r.numel()) {
      throw ShapeError("tensor '" + r.name + "': data length " + std::to_string(r.data.size()) +
                       " does not match shape " + shape_string(r.shape));
    }
    const std::uint64_t len = r.numel() * dtype_size(r.source_dtype);
    header[r.name] = {{"dtype", std::string(dtype_name(r.source_dtype))},
                      {"shape", r.shape},
                      {"data_offsets", {offset, offset + len}}};
    offset += len;
  }
  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::vector<unsigned char> out(8 + text.size() + offset);
  detail::store_le<std::uint64_t>(out.data(), text.size());
  std::copy(text.begin(), text.end(), out.begin() + 8);
  unsigned char* p = out.data() + 8 + text.size();
  for (const auto& r : ckpt.records()) {
    const std::size_t width = dtype_size(r.source_dtype);
    for (std::size_t i = 0; i < r.data.size(); ++i, p += width) {
      encode_element(r.source_dtype, r.data[i], p, "tensor '" + r.name + "'");
    }
  }
  return out;
}

inline void write_file(const std::string& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, encode_checkpoint(ckpt));
}

// --- selection ------------------------------------------------------------

struct Selection {
  std::vector<const TensorRecord*> matrices;  // checkpoint order
  std::vector<std::string> skipped;           // matched but not 2-D
};

inline Selection select_tensors(const Checkpoint& ckpt, const Glob& glob) {
  Selection sel;
  for (const auto& r : ckpt.records()) {
    if (!glob.matches(r.name)) continue;
    if (r.is_matrix()) {
      sel.matrices.push_back(&r);
    } else {
      sel.skipped.push_back(r.name);
    }
  }
  return sel;
}

inline Selection select_tensors(const Checkpoint& ckpt, std::string_view pattern) {
  return select_tensors(ckpt, Glob(pattern));
}

}  // namespace svdscope
