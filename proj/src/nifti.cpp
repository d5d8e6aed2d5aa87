// NIfTI-1 single-file (.nii / .nii.gz) codec.
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "autoseg/volume.hpp"

namespace autoseg::detail {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;
constexpr int kCommentCode = 6;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> slurp(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw IoError("corrupt compressed stream in " + path + ": " + msg);
  return out;
}

class HeaderView {
 public:
  HeaderView(const unsigned char* p, bool swap) : p_(p), swap_(swap) {}

  template <typename T>
  T get(size_t off) const {
    T v;
    std::memcpy(&v, p_ + off, sizeof(T));
    if (swap_) v = byteswap(v);
    return v;
  }

  static int16_t byteswap(int16_t v) { return static_cast<int16_t>(__builtin_bswap16(static_cast<uint16_t>(v))); }
  static int32_t byteswap(int32_t v) { return static_cast<int32_t>(__builtin_bswap32(static_cast<uint32_t>(v))); }
  static float byteswap(float v) { return std::bit_cast<float>(__builtin_bswap32(std::bit_cast<uint32_t>(v))); }

 private:
  const unsigned char* p_;
  bool swap_;
};

DType from_nifti_code(int16_t code, const std::string& path) {
  switch (code) {
    case 2: return DType::u8;
    case 4: return DType::i16;
    case 8: return DType::i32;
    case 16: return DType::f32;
    case 64: return DType::f64;
    case 256: return DType::i8;
    case 512: return DType::u16;
    case 768: return DType::u32;
    case 1024: return DType::i64;
    default: throw IoError(path + ": unsupported NIfTI datatype " + std::to_string(code));
  }
}

int16_t to_nifti_code(DType t) {
  switch (t) {
    case DType::u8: return 2;
    case DType::i16: return 4;
    case DType::i32: return 8;
    case DType::f32: return 16;
    case DType::f64: return 64;
    case DType::i8: return 256;
    case DType::u16: return 512;
    case DType::u32: return 768;
    case DType::i64: return 1024;
  }
  return 0;
}

void swap_elements(std::vector<unsigned char>& bytes, size_t width) {
  if (width == 1) return;
  for (size_t i = 0; i + width <= bytes.size(); i += width) std::reverse(bytes.begin() + i, bytes.begin() + i + width);
}

Affine qform_affine(const HeaderView& h, const std::array<float, 8>& pixdim) {
  const double b = h.get<float>(256), c = h.get<float>(260), d = h.get<float>(264);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
  const double R[3][3] = {{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                          {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                          {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  const double s[3] = {pixdim[1], pixdim[2], qfac * pixdim[3]};
  const double off[3] = {h.get<float>(268), h.get<float>(272), h.get<float>(276)};
  Affine m{};
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) m[r * 4 + col] = R[r][col] * s[col];
    m[r * 4 + 3] = off[r];
  }
  m[15] = 1.0;
  return m;
}

template <typename T>
void put(std::vector<unsigned char>& buf, size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

}  // namespace

RawPayload read_nifti(const std::string& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < kHeaderSize) throw IoError(path + ": truncated NIfTI header");
  int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kHeaderSize) {
    if (HeaderView::byteswap(sizeof_hdr) != kHeaderSize) throw IoError(path + ": not a NIfTI-1 file");
    swap = true;
  }
  const HeaderView h(bytes.data(), swap);
  if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0) throw IoError(path + ": missing n+1 magic (only single-file NIfTI-1 supported)");

  std::array<int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = h.get<int16_t>(40 + 2 * i);
  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = h.get<float>(76 + 4 * i);

  const int ndim = dim[0];
  if (ndim < 1 || ndim > 7) throw IoError(path + ": invalid dim[0]=" + std::to_string(ndim));
  int effective = ndim;
  while (effective > 3 && dim[effective] == 1) --effective;
  if (effective > 4) throw ShapeError(path + ": " + std::to_string(ndim) + "D payload is not a 3D/4D volume");
  for (int i = 1; i <= ndim; ++i) {
    if (dim[i] < 1) throw IoError(path + ": non-positive dim[" + std::to_string(i) + "]");
  }

  RawPayload p;
  p.dtype = from_nifti_code(h.get<int16_t>(70), path);
  const int64_t nx = dim[1], ny = ndim >= 2 ? dim[2] : 1, nz = ndim >= 3 ? dim[3] : 1;
  if (effective == 4) {
    p.shape = {dim[4], nz, ny, nx};
  } else {
    p.shape = {nz, ny, nx};
  }
  p.spacing = {std::abs(pixdim[3]) > 0 ? std::abs(pixdim[3]) : 1.0, std::abs(pixdim[2]) > 0 ? std::abs(pixdim[2]) : 1.0,
               std::abs(pixdim[1]) > 0 ? std::abs(pixdim[1]) : 1.0};

  const int16_t sform = h.get<int16_t>(254), qform = h.get<int16_t>(252);
  if (sform > 0) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) p.affine[r * 4 + c] = h.get<float>(280 + 16 * r + 4 * c);
    }
    p.affine[12] = p.affine[13] = p.affine[14] = 0.0;
    p.affine[15] = 1.0;
  } else if (qform > 0) {
    p.affine = qform_affine(h, pixdim);
  } else {
    p.affine = identity_affine(p.spacing);
  }
  const float slope = h.get<float>(112);
  p.scl_slope = (slope == 0.0f || !std::isfinite(slope)) ? 1.0 : slope;
  p.scl_inter = std::isfinite(h.get<float>(116)) ? h.get<float>(116) : 0.0;

  const size_t vox_offset = static_cast<size_t>(h.get<float>(108));
  if (vox_offset < kHeaderSize || vox_offset > bytes.size()) throw IoError(path + ": invalid vox_offset");

  // Exact double-precision geometry written by this toolkit, stored as a comment extension.
  if (vox_offset >= kVoxOffset && bytes.size() >= kVoxOffset && bytes[kHeaderSize] != 0) {
    size_t off = kVoxOffset;
    while (off + 8 <= vox_offset) {
      const int32_t esize = h.get<int32_t>(off);
      const int32_t ecode = h.get<int32_t>(off + 4);
      if (esize < 16 || off + static_cast<size_t>(esize) > vox_offset) break;
      if (ecode == kCommentCode) {
        const std::string text(reinterpret_cast<const char*>(bytes.data() + off + 8),
                               strnlen(reinterpret_cast<const char*>(bytes.data() + off + 8), esize - 8));
        auto j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_object() && j.contains("autoseg_geometry")) {
          const auto& g = j["autoseg_geometry"];
          const auto sp = g["spacing"].get<std::vector<double>>();
          const auto af = g["affine"].get<std::vector<double>>();
          if (sp.size() == 3 && af.size() == 16) {
            std::copy(sp.begin(), sp.end(), p.spacing.begin());
            std::copy(af.begin(), af.end(), p.affine.begin());
          }
        }
      }
      off += static_cast<size_t>(esize);
    }
  }

  const size_t width = dtype_size(p.dtype);
  const size_t nbytes = static_cast<size_t>(Tensor<float>::count(p.shape)) * width;
  if (bytes.size() < vox_offset + nbytes) throw IoError(path + ": truncated voxel data");
  p.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(vox_offset),
                 bytes.begin() + static_cast<std::ptrdiff_t>(vox_offset + nbytes));
  if (swap) swap_elements(p.bytes, width);
  return p;
}

void write_nifti(const RawPayload& p, const std::string& path) {
  if (p.shape.size() != 3 && p.shape.size() != 4) throw ShapeError(path + ": only 3D/4D volumes can be written");
  nlohmann::json geom;
  geom["autoseg_geometry"] = {{"spacing", p.spacing}, {"affine", p.affine}};
  std::string text = geom.dump();
  size_t esize = 8 + text.size() + 1;
  esize = (esize + 15) / 16 * 16;
  const size_t vox_offset = kVoxOffset + esize;

  std::vector<unsigned char> hdr(vox_offset, 0);
  put<int32_t>(hdr, 0, kHeaderSize);
  hdr[38] = 'r';
  const bool four = p.shape.size() == 4;
  const int64_t nz = p.shape[four ? 1 : 0], ny = p.shape[four ? 2 : 1], nx = p.shape[four ? 3 : 2];
  for (int64_t v : p.shape) {
    if (v > 32767) throw ShapeError(path + ": dimension exceeds NIfTI-1 limit");
  }
  put<int16_t>(hdr, 40, static_cast<int16_t>(four ? 4 : 3));
  put<int16_t>(hdr, 42, static_cast<int16_t>(nx));
  put<int16_t>(hdr, 44, static_cast<int16_t>(ny));
  put<int16_t>(hdr, 46, static_cast<int16_t>(nz));
  put<int16_t>(hdr, 48, static_cast<int16_t>(four ? p.shape[0] : 1));
  for (int i = 5; i < 8; ++i) put<int16_t>(hdr, 40 + 2 * i, 1);
  put<int16_t>(hdr, 70, to_nifti_code(p.dtype));
  put<int16_t>(hdr, 72, static_cast<int16_t>(dtype_size(p.dtype) * 8));
  put<float>(hdr, 76, 1.0f);
  put<float>(hdr, 80, static_cast<float>(p.spacing[2]));
  put<float>(hdr, 84, static_cast<float>(p.spacing[1]));
  put<float>(hdr, 88, static_cast<float>(p.spacing[0]));
  for (int i = 4; i < 8; ++i) put<float>(hdr, 76 + 4 * i, 1.0f);
  put<float>(hdr, 108, static_cast<float>(vox_offset));
  put<float>(hdr, 112, 1.0f);
  put<float>(hdr, 116, 0.0f);
  hdr[123] = 2;  // mm
  put<int16_t>(hdr, 252, 0);
  put<int16_t>(hdr, 254, 1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) put<float>(hdr, 280 + 16 * r + 4 * c, static_cast<float>(p.affine[r * 4 + c]));
  }
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  hdr[kHeaderSize] = 1;
  put<int32_t>(hdr, kVoxOffset, static_cast<int32_t>(esize));
  put<int32_t>(hdr, kVoxOffset + 4, kCommentCode);
  std::memcpy(hdr.data() + kVoxOffset + 8, text.data(), text.size());

  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path);
    bool ok = gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) == static_cast<int>(hdr.size());
    size_t off = 0;
    while (ok && off < p.bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<size_t>(p.bytes.size() - off, 1u << 30));
      ok = gzwrite(f, p.bytes.data() + off, chunk) == static_cast<int>(chunk);
      off += chunk;
    }
    if (gzclose(f) != Z_OK || !ok) throw IoError("failed writing " + path);
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
    out.write(reinterpret_cast<const char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
    if (!out) throw IoError("failed writing " + path);
  }
}

}  // namespace autoseg::detail
