#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slad/tensor.hpp"

namespace slad {

struct DatasetDescriptor {
  std::string kind;  // "synthetic" | "image-folder"
  std::size_t classes = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::size_t image_size = 0;
  std::string params;
};

/// In-memory image classification dataset. Samples live in one flat
/// [N x S x S x C] array; splits are disjoint index lists into it. When a
/// validation split is not given, 10% of the training data is reserved.
struct Dataset {
  std::size_t image_size = 0, channels = 3, num_classes = 0;
  std::vector<double> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  bool augment_hflip = false;
  std::string id;

  std::size_t sample_count() const { return labels.size(); }
  std::size_t sample_values() const {
    return image_size * image_size * channels;
  }
  DatasetDescriptor describe() const;
  /// Final-evaluation split; falls back to val when no test data exists.
  const std::vector<std::size_t>& eval_split() const {
    return test_idx.empty() ? val_idx : test_idx;
  }
};

struct SynthConfig {
  std::size_t classes = 10;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 40;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
  double noise = 0.9;          // per-pixel gaussian sigma
  double phase_jitter = 2.2;   // radians, uniform; blurs pixel centroids
  double amp_lo = 0.7, amp_hi = 1.3;
  double freq_base = 2.0;      // class frequency band: base + step * (c % 3)
  double freq_step = 1.0;

  std::string describe() const;
};

/// Class-conditional oriented sinusoid textures plus noise. Deterministic in
/// the seed; classes differ by orientation/frequency with a phase-stable
/// component so pixel-space centroids carry signal without saturating.
Dataset synth_dataset(const SynthConfig& cfg);

struct ImageFolderConfig {
  std::filesystem::path path;
  std::size_t image_size = 32;
  bool train_hflip = true;
};

struct ImageFolderStats {
  std::size_t skipped_files = 0;
  std::vector<std::string> class_names;
};

/// Loads `path/<class>/*.ppm|*.pgm` (binary P6/P5), or the same layout under
/// train/ val/ test/ subdirectories. Files are taken in lexicographic order;
/// unreadable files are skipped with a warning count; an empty class is a
/// hard error. Images are bilinearly resized to the configured size and
/// scaled to [-1, 1].
Dataset load_image_folder(const ImageFolderConfig& cfg,
                          ImageFolderStats* stats = nullptr);

/// Pixel-space nearest-centroid classifier: centroids from the train split,
/// scored on the eval split. The synthetic generator aims this between 40%
/// and 90% so adapted encoders have headroom to show.
double nearest_centroid_accuracy(const Dataset& ds);

/// Materializes one batch; flips are applied here so teacher and student
/// consume identical augmented pixels.
Tensor make_image_batch(const Dataset& ds, std::span<const std::size_t> idx,
                        const std::vector<bool>* hflip = nullptr);
std::vector<std::size_t> gather_labels(const Dataset& ds,
                                       std::span<const std::size_t> idx);

/// Writes samples as binary PPM class folders (lossy 8-bit quantization);
/// the result round-trips through load_image_folder.
void export_ppm_folder(const Dataset& ds, const std::filesystem::path& dir);

}  // namespace slad
