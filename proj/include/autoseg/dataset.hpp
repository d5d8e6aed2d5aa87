#pragma once

#include <string>
#include <vector>

#include "autoseg/manifest.hpp"
#include "autoseg/subregion.hpp"
#include "autoseg/volume.hpp"

namespace autoseg {

// A case ready for the network: normalized C x D x H x W image with absent
// modalities zero-filled, and (when labelled) its K x D x H x W subregion mask.
struct PreparedCase {
  std::string case_id;
  MultiChannelVolume image;
  Mask mask;                        // empty when the case has no label
  std::vector<uint8_t> available;   // per subregion channel
  std::vector<uint8_t> present;     // per modality

  bool labelled() const { return !mask.empty(); }
};

// One single-channel file per modality, or one multi-channel file holding all of them.
MultiChannelVolume load_case_image(const CaseRecord& rec, int in_channels);

PreparedCase prepare_case(const CaseRecord& rec, const SubregionSpec& spec, int in_channels, bool with_label = true);

std::vector<PreparedCase> prepare_cases(const std::vector<const CaseRecord*>& recs, const SubregionSpec& spec,
                                        int in_channels, bool with_label = true);

}  // namespace autoseg
