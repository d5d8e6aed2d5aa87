#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "autoseg/subregion.hpp"
#include "autoseg/tensor.hpp"

namespace autoseg {

using Spacing = std::array<double, 3>;   // mm, in array axis order (d, h, w)
using Affine = std::array<double, 16>;   // row-major 4x4, maps NIfTI voxel (i=w, j=h, k=d) to world

Affine identity_affine(const Spacing& spacing = {1.0, 1.0, 1.0});

// C x D x H x W real intensities.
struct MultiChannelVolume {
  Tensorf data;
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine = identity_affine();

  int64_t channels() const { return data.dim(0); }
  Shape3 shape() const { return data.spatial(); }
  void validate() const;  // ShapeError / ValidationError
};

// D x H x W non-negative integer labels.
struct LabelVolume {
  Tensor<int32_t> data;
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine = identity_affine();

  Shape3 shape() const { return data.spatial(); }
  std::set<int> alphabet() const;
  void validate() const;
};

using Volume = std::variant<MultiChannelVolume, LabelVolume>;

// K x D x H x W binary channels, one per subregion.
struct MultiLabelMask {
  Mask data;
  std::vector<std::string> class_names;
  std::vector<uint8_t> available;  // one flag per channel

  int64_t channels() const { return data.dim(0); }
  Shape3 shape() const { return data.spatial(); }
};

// Dispatches on extension: .nii / .nii.gz (NIfTI-1) or .json (raw sidecar + .bin).
// Integer payloads load as LabelVolume, floating payloads as MultiChannelVolume.
Volume read_volume(const std::string& path);
MultiChannelVolume read_image(const std::string& path);
LabelVolume read_label(const std::string& path);

void write_volume(const MultiChannelVolume& vol, const std::string& path);
void write_volume(const LabelVolume& vol, const std::string& path);
void write_volume(const Volume& vol, const std::string& path);

namespace detail {
// Shared decoded payload before dtype dispatch.
enum class DType { u8, i8, u16, i16, u32, i32, i64, f32, f64 };
const char* dtype_name(DType t);
DType dtype_from_name(const std::string& name);
bool dtype_is_integer(DType t);
size_t dtype_size(DType t);

struct RawPayload {
  Shape shape;  // 3D (D,H,W) or 4D (C,D,H,W)
  DType dtype = DType::f32;
  std::vector<unsigned char> bytes;  // little-endian, native order after decode
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine = identity_affine();
  double scl_slope = 1.0;
  double scl_inter = 0.0;
};

Volume payload_to_volume(const RawPayload& p, const std::string& path);
RawPayload volume_to_payload(const MultiChannelVolume& v);
RawPayload volume_to_payload(const LabelVolume& v);

RawPayload read_nifti(const std::string& path);
void write_nifti(const RawPayload& p, const std::string& path);
RawPayload read_raw(const std::string& path);
void write_raw(const RawPayload& p, const std::string& path);
}  // namespace detail

}  // namespace autoseg
