#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spaformer/tensor.hpp"

namespace spaformer {

/// Shadow image, binary mask and shadow-free image of one scene.
/// Images are (1, 3, H, W) in [0, 255]; the mask is (1, 1, H, W) in {0, 1}.
struct ShadowTriplet {
  Tensor<float> shadow;
  Tensor<float> mask;
  Tensor<float> free;
  std::string id;
};

struct TripletFiles {
  std::string shadow, mask, free;
};

/// An id seen in some but not all of the three directories.
struct IncompleteEntry {
  std::string id;
  std::vector<std::string> missing;  // any of "shadow", "mask", "free"
};

enum class DatasetLayout {
  detect,  // split directories when present, otherwise flat
  istd,    // <root>/<split>/<split>_A|_B|_C
  flat,    // <root>/<shadow_dir>, <mask_dir>, <free_dir>
};

struct ScanOptions {
  DatasetLayout layout = DatasetLayout::detect;
  std::string shadow_dir = "shadow";
  std::string mask_dir = "mask";
  std::string free_dir = "free";
  std::uint64_t seed = 0;
  // Seeded split when the data carries none: 1330 of every 1870 go to training.
  std::size_t split_train = 1330;
  std::size_t split_total = 1870;
};

struct DatasetIndex {
  std::string root;
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
  std::uint64_t seed = 0;
  bool split_from_layout = false;  // true when train/test came from directories
  std::map<std::string, TripletFiles> files;
  std::vector<IncompleteEntry> incomplete;

  std::size_t size() const { return files.size(); }
};

/// Indexes every id present in all three directories. Throws IoError when
/// the root is missing or holds no complete triplet.
DatasetIndex scan_istd(const std::string& root, const ScanOptions& options = {});

/// Decodes one triplet, optionally resized (bilinear) to target (H, W). The
/// mask is thresholded at 128 after any resize.
ShadowTriplet load_triplet(const DatasetIndex& index, const std::string& id,
                           std::optional<std::pair<std::size_t, std::size_t>> target = std::nullopt);

/// Half-pixel-centred bilinear resize of every (n, c) plane.
Tensor<float> resize_bilinear(const Tensor<float>& t, std::size_t height, std::size_t width);

/// values >= threshold -> 1, else 0.
Tensor<float> binarize(const Tensor<float>& t, float threshold = 128.0f);

/// [0, 255] -> [-1, 1] as x / 127.5 - 1.
Tensor<float> to_model_range(const Tensor<float>& image);
/// [-1, 1] -> [0, 255], rounded to integers and clamped.
Tensor<float> from_model_range(const Tensor<float>& image);

}  // namespace spaformer
