#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "autoseg/volume.hpp"

namespace fs = std::filesystem;

namespace autoseg {

Affine identity_affine(const Spacing& spacing) {
  Affine a{};
  a[0] = spacing[2];
  a[5] = spacing[1];
  a[10] = spacing[0];
  a[15] = 1.0;
  return a;
}

void MultiChannelVolume::validate() const {
  if (data.rank() != 4) throw ShapeError("image volume must be C x D x H x W, got " + shape_str(data.shape()));
  for (auto v : data.shape()) {
    if (v < 1) throw ShapeError("image volume has empty dimension " + shape_str(data.shape()));
  }
  for (double s : spacing) {
    if (!(s > 0)) throw ValidationError("voxel spacing must be positive");
  }
  for (float v : data.span()) {
    if (!std::isfinite(v)) throw ValidationError("image volume contains non-finite values");
  }
}

std::set<int> LabelVolume::alphabet() const {
  std::vector<bool> seen;
  for (int32_t v : data.span()) {
    if (v >= static_cast<int32_t>(seen.size())) seen.resize(static_cast<size_t>(v) + 1, false);
    if (v >= 0) seen[static_cast<size_t>(v)] = true;
  }
  std::set<int> out;
  for (size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) out.insert(static_cast<int>(i));
  }
  return out;
}

void LabelVolume::validate() const {
  if (data.rank() != 3) throw ShapeError("label volume must be D x H x W, got " + shape_str(data.shape()));
  for (auto v : data.shape()) {
    if (v < 1) throw ShapeError("label volume has empty dimension " + shape_str(data.shape()));
  }
  for (int32_t v : data.span()) {
    if (v < 0) throw ValidationError("label volume contains negative label " + std::to_string(v));
  }
}

namespace detail {

const char* dtype_name(DType t) {
  switch (t) {
    case DType::u8: return "uint8";
    case DType::i8: return "int8";
    case DType::u16: return "uint16";
    case DType::i16: return "int16";
    case DType::u32: return "uint32";
    case DType::i32: return "int32";
    case DType::i64: return "int64";
    case DType::f32: return "float32";
    case DType::f64: return "float64";
  }
  return "?";
}

DType dtype_from_name(const std::string& n) {
  for (DType t : {DType::u8, DType::i8, DType::u16, DType::i16, DType::u32, DType::i32, DType::i64, DType::f32,
                  DType::f64}) {
    if (n == dtype_name(t)) return t;
  }
  throw IoError("unknown dtype '" + n + "'");
}

bool dtype_is_integer(DType t) { return t != DType::f32 && t != DType::f64; }

size_t dtype_size(DType t) {
  switch (t) {
    case DType::u8:
    case DType::i8: return 1;
    case DType::u16:
    case DType::i16: return 2;
    case DType::u32:
    case DType::i32:
    case DType::f32: return 4;
    case DType::i64:
    case DType::f64: return 8;
  }
  return 0;
}

namespace {

template <typename Src, typename Dst>
void convert(const std::vector<unsigned char>& bytes, std::vector<Dst>& out) {
  const size_t n = bytes.size() / sizeof(Src);
  out.resize(n);
  for (size_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, bytes.data() + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<Dst>(v);
  }
}

template <typename Dst>
std::vector<Dst> decode(const RawPayload& p) {
  std::vector<Dst> out;
  switch (p.dtype) {
    case DType::u8: convert<uint8_t>(p.bytes, out); break;
    case DType::i8: convert<int8_t>(p.bytes, out); break;
    case DType::u16: convert<uint16_t>(p.bytes, out); break;
    case DType::i16: convert<int16_t>(p.bytes, out); break;
    case DType::u32: convert<uint32_t>(p.bytes, out); break;
    case DType::i32: convert<int32_t>(p.bytes, out); break;
    case DType::i64: convert<int64_t>(p.bytes, out); break;
    case DType::f32: convert<float>(p.bytes, out); break;
    case DType::f64: convert<double>(p.bytes, out); break;
  }
  return out;
}

template <typename T>
std::vector<unsigned char> encode(std::span<const T> values) {
  std::vector<unsigned char> out(values.size() * sizeof(T));
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

}  // namespace

Volume payload_to_volume(const RawPayload& p, const std::string& path) {
  if (p.shape.size() != 3 && p.shape.size() != 4) {
    throw ShapeError(path + ": " + std::to_string(p.shape.size()) + "D payload is not a 3D/4D volume");
  }
  if (dtype_is_integer(p.dtype)) {
    Shape s = p.shape;
    if (s.size() == 4) {
      if (s[0] != 1) throw ShapeError(path + ": multi-channel integer payload cannot be a label volume");
      s.erase(s.begin());
    }
    if (p.dtype == DType::u32 || p.dtype == DType::i64) {
      for (int64_t v : decode<int64_t>(p)) {
        if (v > std::numeric_limits<int32_t>::max()) throw ValidationError(path + ": label value out of range");
      }
    }
    LabelVolume lab{Tensor<int32_t>(s, decode<int32_t>(p)), p.spacing, p.affine};
    lab.validate();
    return lab;
  }
  Shape s = p.shape;
  if (s.size() == 3) s.insert(s.begin(), 1);
  std::vector<float> values = decode<float>(p);
  if (p.scl_slope != 1.0 || p.scl_inter != 0.0) {
    for (auto& v : values) v = static_cast<float>(v * p.scl_slope + p.scl_inter);
  }
  MultiChannelVolume vol{Tensorf(s, std::move(values)), p.spacing, p.affine};
  vol.validate();
  return vol;
}

RawPayload volume_to_payload(const MultiChannelVolume& img) {
  img.validate();
  RawPayload p;
  p.shape = img.data.shape();
  p.dtype = DType::f32;
  p.bytes = encode(img.data.span());
  p.spacing = img.spacing;
  p.affine = img.affine;
  return p;
}

RawPayload volume_to_payload(const LabelVolume& lab) {
  RawPayload p;
  lab.validate();
  p.shape = lab.data.shape();
  p.spacing = lab.spacing;
  p.affine = lab.affine;
  int32_t max_label = 0;
  for (int32_t x : lab.data.span()) max_label = std::max(max_label, x);
  if (max_label <= 255) {
    std::vector<uint8_t> narrow(lab.data.storage().begin(), lab.data.storage().end());
    p.dtype = DType::u8;
    p.bytes = encode(std::span<const uint8_t>(narrow));
  } else if (max_label <= 32767) {
    std::vector<int16_t> narrow(lab.data.storage().begin(), lab.data.storage().end());
    p.dtype = DType::i16;
    p.bytes = encode(std::span<const int16_t>(narrow));
  } else {
    p.dtype = DType::i32;
    p.bytes = encode(lab.data.span());
  }
  return p;
}

namespace {

std::string raw_base(const std::string& path) {
  fs::path p(path);
  if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
  return p.string();
}

}  // namespace

RawPayload read_raw(const std::string& path) {
  const std::string base = raw_base(path);
  std::ifstream meta(base + ".json");
  if (!meta) throw IoError("cannot open " + base + ".json");
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(base + ".json: corrupt sidecar: " + e.what());
  }
  RawPayload p;
  try {
    p.shape = j.at("shape").get<Shape>();
    p.dtype = dtype_from_name(j.at("dtype").get<std::string>());
    if (j.contains("spacing")) {
      const auto sp = j["spacing"].get<std::vector<double>>();
      if (sp.size() != 3) throw IoError(base + ".json: spacing must have 3 entries");
      std::copy(sp.begin(), sp.end(), p.spacing.begin());
    }
    if (j.contains("affine")) {
      const auto af = j["affine"].get<std::vector<double>>();
      if (af.size() != 16) throw IoError(base + ".json: affine must have 16 entries");
      std::copy(af.begin(), af.end(), p.affine.begin());
    } else {
      p.affine = identity_affine(p.spacing);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(base + ".json: invalid sidecar: " + e.what());
  }
  if (p.shape.size() != 3 && p.shape.size() != 4) {
    throw ShapeError(path + ": " + std::to_string(p.shape.size()) + "D payload is not a 3D/4D volume");
  }
  std::ifstream bin(base + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + base + ".bin");
  const size_t nbytes = static_cast<size_t>(Tensorf::count(p.shape)) * dtype_size(p.dtype);
  p.bytes.resize(nbytes);
  bin.read(reinterpret_cast<char*>(p.bytes.data()), static_cast<std::streamsize>(nbytes));
  if (static_cast<size_t>(bin.gcount()) != nbytes) throw IoError(base + ".bin: truncated payload");
  return p;
}

void write_raw(const RawPayload& p, const std::string& path) {
  const std::string base = raw_base(path);
  nlohmann::json j;
  j["shape"] = p.shape;
  j["dtype"] = dtype_name(p.dtype);
  j["spacing"] = p.spacing;
  j["affine"] = p.affine;
  std::ofstream meta(base + ".json");
  if (!meta) throw IoError("cannot write " + base + ".json");
  meta << j.dump(2) << "\n";
  std::ofstream bin(base + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + base + ".bin");
  bin.write(reinterpret_cast<const char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
  if (!bin || !meta) throw IoError("failed writing " + base);
}

}  // namespace detail

namespace {

bool is_nifti(const std::string& path) {
  auto ends = [&](const std::string& s) {
    return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
  };
  return ends(".nii") || ends(".nii.gz");
}

}  // namespace

Volume read_volume(const std::string& path) {
  if (!fs::exists(path) && !(fs::exists(path + ".json"))) throw IoError("volume not found: " + path);
  const detail::RawPayload p = is_nifti(path) ? detail::read_nifti(path) : detail::read_raw(path);
  return detail::payload_to_volume(p, path);
}

MultiChannelVolume read_image(const std::string& path) {
  Volume v = read_volume(path);
  if (auto* img = std::get_if<MultiChannelVolume>(&v)) return std::move(*img);
  // Integer-typed intensity images are promoted.
  const auto& lab = std::get<LabelVolume>(v);
  const Shape3 s = lab.shape();
  Tensorf data({1, s.d, s.h, s.w});
  for (int64_t i = 0; i < data.numel(); ++i) data[i] = static_cast<float>(lab.data[i]);
  return {std::move(data), lab.spacing, lab.affine};
}

LabelVolume read_label(const std::string& path) {
  Volume v = read_volume(path);
  if (auto* lab = std::get_if<LabelVolume>(&v)) return std::move(*lab);
  throw ValidationError(path + ": expected an integer-typed label volume");
}

namespace {

void write_payload(const detail::RawPayload& p, const std::string& path) {
  if (is_nifti(path)) {
    detail::write_nifti(p, path);
  } else {
    detail::write_raw(p, path);
  }
}

void check_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw IoError("parent directory does not exist: " + parent.string());
}

}  // namespace

void write_volume(const MultiChannelVolume& vol, const std::string& path) {
  check_parent(path);
  write_payload(detail::volume_to_payload(vol), path);
}

void write_volume(const LabelVolume& vol, const std::string& path) {
  check_parent(path);
  write_payload(detail::volume_to_payload(vol), path);
}

void write_volume(const Volume& vol, const std::string& path) {
  std::visit([&](const auto& v) { write_volume(v, path); }, vol);
}

}  // namespace autoseg
