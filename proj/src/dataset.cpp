#include "metakernel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "metakernel/rng.hpp"

namespace mk {

void SyntheticTaskConfig::validate() const {
  if (image_size < 4 || channels < 1 || num_classes < 2 || samples < 1) {
    throw ValueError("synthetic task: bad image/class/sample counts");
  }
  if (noise_sigma < 0.0) throw ValueError("synthetic task: negative noise sigma");
  if (pattern_radius() >= image_size / 2) {
    throw ValueError("synthetic task: pattern radius " +
                     std::to_string(pattern_radius()) +
                     " must be smaller than image_size/2 = " +
                     std::to_string(image_size / 2));
  }
}

SyntheticTaskConfig::ScaleMode scale_mode_from_string(const std::string& s) {
  if (s == "small_structure") return SyntheticTaskConfig::ScaleMode::small_structure;
  if (s == "large_structure") return SyntheticTaskConfig::ScaleMode::large_structure;
  throw ValueError("unknown scale mode: " + s);
}

std::string to_string(SyntheticTaskConfig::ScaleMode m) {
  return m == SyntheticTaskConfig::ScaleMode::small_structure ? "small_structure"
                                                              : "large_structure";
}

namespace {

void stamp_line(double* img, int size, double cx, double cy, double angle,
                int radius, int spacing) {
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (int t = -radius; t <= radius; t += spacing) {
    const int x = static_cast<int>(std::lround(cx + t * dx));
    const int y = static_cast<int>(std::lround(cy + t * dy));
    if (x >= 0 && x < size && y >= 0 && y < size) {
      img[y * size + x] = 1.0;
    }
  }
}

}  // namespace

Dataset generate_dataset(const SyntheticTaskConfig& cfg, std::uint64_t split_tag) {
  cfg.validate();
  const int size = cfg.image_size;
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  const bool small = cfg.scale_mode == SyntheticTaskConfig::ScaleMode::small_structure;
  const int radius = cfg.pattern_radius() == 1 ? 5 : cfg.pattern_radius();
  const int spacing = small ? 1 : 3;

  Dataset ds;
  ds.images = Tensor::zeros({static_cast<std::size_t>(cfg.samples),
                             static_cast<std::size_t>(cfg.channels),
                             static_cast<std::size_t>(size),
                             static_cast<std::size_t>(size)});
  ds.labels.resize(static_cast<std::size_t>(cfg.samples));

  const int margin = radius + 1;
  for (int i = 0; i < cfg.samples; ++i) {
    const int label = i % cfg.num_classes;
    ds.labels[static_cast<std::size_t>(i)] = label;
    CounterRng rng(cfg.seed ^ rng_domain::kData, split_tag,
                   static_cast<std::uint64_t>(i));
    double* img = ds.images.values().data() + static_cast<std::size_t>(i) *
                                                  cfg.channels * plane;
    const double angle =
        3.141592653589793 * static_cast<double>(label) / cfg.num_classes;
    const int strokes = 3;
    for (int s = 0; s < strokes; ++s) {
      const double cx =
          margin + rng.uniform01() * std::max(1, size - 2 * margin);
      const double cy =
          margin + rng.uniform01() * std::max(1, size - 2 * margin);
      stamp_line(img, size, cx, cy, angle, radius, spacing);
    }
    if (cfg.noise_sigma > 0.0) {
      for (std::size_t k = 0; k < plane; ++k) {
        img[k] += cfg.noise_sigma * rng.normal();
      }
    }
    // Remaining channels copy channel 0 (the default task is single-channel).
    for (int c = 1; c < cfg.channels; ++c) {
      std::copy(img, img + plane, img + static_cast<std::size_t>(c) * plane);
    }
  }
  return ds;
}

namespace {

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path,
                          const char* what) {
  unsigned char bytes[4];
  const auto offset = in.tellg();
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw ValueError(path + ": truncated header while reading " + what +
                     " at offset " +
                     std::to_string(offset == std::streampos(-1)
                                        ? 0
                                        : static_cast<long long>(offset)));
  }
  return (static_cast<std::uint32_t>(bytes[0]) << 24) |
         (static_cast<std::uint32_t>(bytes[1]) << 16) |
         (static_cast<std::uint32_t>(bytes[2]) << 8) |
         static_cast<std::uint32_t>(bytes[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw ValueError(images_path + ": cannot open");
  const std::uint32_t img_magic = read_u32_be(imgs, images_path, "magic");
  if (img_magic != kImagesMagic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "magic mismatch: got 0x%08x, want 0x%08x",
                  img_magic, kImagesMagic);
    throw ValueError(images_path + ": " + buf);
  }
  const std::uint32_t count = read_u32_be(imgs, images_path, "count");
  const std::uint32_t rows = read_u32_be(imgs, images_path, "rows");
  const std::uint32_t cols = read_u32_be(imgs, images_path, "cols");
  const std::size_t pixels =
      static_cast<std::size_t>(count) * rows * cols;
  std::vector<unsigned char> raw(pixels);
  if (!imgs.read(reinterpret_cast<char*>(raw.data()),
                 static_cast<std::streamsize>(pixels))) {
    throw ValueError(images_path + ": truncated image data (wanted " +
                     std::to_string(pixels) + " bytes)");
  }

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw ValueError(labels_path + ": cannot open");
  const std::uint32_t lab_magic = read_u32_be(labs, labels_path, "magic");
  if (lab_magic != kLabelsMagic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "magic mismatch: got 0x%08x, want 0x%08x",
                  lab_magic, kLabelsMagic);
    throw ValueError(labels_path + ": " + buf);
  }
  const std::uint32_t lab_count = read_u32_be(labs, labels_path, "count");
  if (lab_count != count) {
    throw ValueError(labels_path + ": count mismatch: " + std::to_string(lab_count) +
                     " labels for " + std::to_string(count) + " images");
  }
  std::vector<unsigned char> lab_raw(lab_count);
  if (!labs.read(reinterpret_cast<char*>(lab_raw.data()),
                 static_cast<std::streamsize>(lab_count))) {
    throw ValueError(labels_path + ": truncated label data");
  }

  Dataset ds;
  ds.images = Tensor::zeros({count, 1, rows, cols});
  for (std::size_t i = 0; i < pixels; ++i) {
    ds.images[i] = static_cast<double>(raw[i]) / 255.0;
  }
  ds.labels.assign(lab_raw.begin(), lab_raw.end());
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  if (ds.images.ndim() != 4 || ds.images.extent(1) != 1) {
    throw ShapeError("save_idx: expected single-channel images [N,1,H,W]");
  }
  const std::size_t n = ds.images.extent(0);
  const std::size_t rows = ds.images.extent(2), cols = ds.images.extent(3);
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw ValueError(images_path + ": cannot open for writing");
  write_u32_be(imgs, kImagesMagic);
  write_u32_be(imgs, static_cast<std::uint32_t>(n));
  write_u32_be(imgs, static_cast<std::uint32_t>(rows));
  write_u32_be(imgs, static_cast<std::uint32_t>(cols));
  for (double v : ds.images.values()) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    const unsigned char byte =
        static_cast<unsigned char>(std::lround(clamped * 255.0));
    imgs.write(reinterpret_cast<const char*>(&byte), 1);
  }

  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw ValueError(labels_path + ": cannot open for writing");
  write_u32_be(labs, kLabelsMagic);
  write_u32_be(labs, static_cast<std::uint32_t>(ds.labels.size()));
  for (int label : ds.labels) {
    const unsigned char byte = static_cast<unsigned char>(label);
    labs.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

void validate_labels(const Dataset& ds, int num_classes) {
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] >= num_classes) {
      throw ValueError("label out of range at index " + std::to_string(i) + ": " +
                       std::to_string(ds.labels[i]) + " with " +
                       std::to_string(num_classes) + " classes");
    }
  }
}

}  // namespace mk
