#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metakernel/tensor.hpp"

namespace mk {

/// Synthetic classification task whose classes are line orientations drawn at
/// a controlled spatial scale. small_structure draws solid strokes readable
/// inside a 3x3 window; large_structure draws the same strokes as dotted
/// lines (dot spacing 3), so orientation only becomes visible to kernels
/// covering several dots. The optimal receptive field is therefore a knob.
struct SyntheticTaskConfig {
  enum class ScaleMode { small_structure, large_structure };

  int image_size = 24;
  int channels = 1;
  int num_classes = 4;
  ScaleMode scale_mode = ScaleMode::large_structure;
  int samples = 4000;
  double noise_sigma = 0.25;
  std::uint64_t seed = 0;

  /// Radius of the class-defining pattern.
  int pattern_radius() const {
    return scale_mode == ScaleMode::small_structure ? 1 : 7;
  }
  void validate() const;
};

SyntheticTaskConfig::ScaleMode scale_mode_from_string(const std::string& s);
std::string to_string(SyntheticTaskConfig::ScaleMode m);

struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Deterministic generation: (config, split_tag) fixes every pixel. Labels
/// cycle through the classes, so counts are balanced whenever samples is a
/// multiple of num_classes.
Dataset generate_dataset(const SyntheticTaskConfig& cfg, std::uint64_t split_tag);

/// IDX (MNIST container) ingestion: magic 0x00000803 for u8 images,
/// 0x00000801 for u8 labels, big-endian dimensions. Pixels scale to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset as a u8 IDX pair (values clamped to [0,1] then scaled).
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// Rejects labels outside [0, num_classes).
void validate_labels(const Dataset& ds, int num_classes);

}  // namespace mk
