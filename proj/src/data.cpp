#include "spaformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "spaformer/errors.hpp"
#include "spaformer/png_io.hpp"

namespace fs = std::filesystem;

namespace spaformer {
namespace {

// stem -> full path for every regular file in dir
std::map<std::string, std::string> list_images(const fs::path& dir) {
  std::map<std::string, std::string> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || name[0] == '.') continue;
    out[entry.path().stem().string()] = entry.path().string();
  }
  return out;
}

struct DirTriple {
  fs::path shadow, mask, free;
};

// Adds complete ids from one directory triple; returns them sorted.
std::vector<std::string> collect(const DirTriple& dirs, DatasetIndex& index) {
  const auto a = list_images(dirs.shadow);
  const auto b = list_images(dirs.mask);
  const auto c = list_images(dirs.free);
  std::set<std::string> all;
  for (const auto* m : {&a, &b, &c})
    for (const auto& [id, path] : *m) all.insert(id);

  std::vector<std::string> ids;
  for (const auto& id : all) {
    IncompleteEntry miss{id, {}};
    if (!a.count(id)) miss.missing.push_back("shadow");
    if (!b.count(id)) miss.missing.push_back("mask");
    if (!c.count(id)) miss.missing.push_back("free");
    if (!miss.missing.empty()) {
      index.incomplete.push_back(std::move(miss));
      continue;
    }
    if (index.files.count(id)) throw IoError(dirs.shadow.string(), "id '" + id + "' appears in more than one split");
    index.files[id] = TripletFiles{a.at(id), b.at(id), c.at(id)};
    ids.push_back(id);
  }
  return ids;
}

DirTriple istd_dirs(const fs::path& root, const std::string& split) {
  const fs::path base = root / split;
  return {base / (split + "_A"), base / (split + "_B"), base / (split + "_C")};
}

bool has_istd_split(const fs::path& root, const std::string& split) {
  std::error_code ec;
  return fs::is_directory(istd_dirs(root, split).shadow, ec);
}

Tensor<float> load_channels(const std::string& path, std::size_t want) {
  Image8 img = read_png(path);
  if (img.channels == want) return image_to_tensor(img);
  if (want == 1) {
    // colour mask: any channel is as good as another for a binary image; use luma
    Image8 gray{img.width, img.height, 1, std::vector<std::uint8_t>(img.width * img.height)};
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
      const double y = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] + 0.114 * img.pixels[3 * i + 2];
      gray.pixels[i] = static_cast<std::uint8_t>(std::lround(y));
    }
    return image_to_tensor(gray);
  }
  Image8 rgb{img.width, img.height, 3, std::vector<std::uint8_t>(img.width * img.height * 3)};
  for (std::size_t i = 0; i < img.width * img.height; ++i)
    for (std::size_t c = 0; c < 3; ++c) rgb.pixels[3 * i + c] = img.pixels[i];
  return image_to_tensor(rgb);
}

}  // namespace

DatasetIndex scan_istd(const std::string& root, const ScanOptions& options) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError(root, "dataset root is not a directory");
  if (options.split_total == 0 || options.split_train > options.split_total) {
    throw ContractViolation("scan_istd: split ratio " + std::to_string(options.split_train) + "/" +
                            std::to_string(options.split_total) + " is invalid");
  }
  DatasetIndex index;
  index.root = root;
  index.seed = options.seed;

  const bool istd = options.layout == DatasetLayout::istd ||
                    (options.layout == DatasetLayout::detect && (has_istd_split(root, "train") || has_istd_split(root, "test")));
  if (istd) {
    index.split_from_layout = true;
    if (has_istd_split(root, "train")) index.train_ids = collect(istd_dirs(root, "train"), index);
    if (has_istd_split(root, "test")) index.test_ids = collect(istd_dirs(root, "test"), index);
  } else {
    const fs::path r(root);
    std::vector<std::string> ids = collect({r / options.shadow_dir, r / options.mask_dir, r / options.free_dir}, index);
    std::mt19937_64 rng(options.seed);
    // Fisher-Yates with an explicit draw so the split is identical across standard libraries
    for (std::size_t i = ids.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(ids[i - 1], ids[j]);
    }
    const std::size_t n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(ids.size()) * static_cast<double>(options.split_train) /
                     static_cast<double>(options.split_total)));
    index.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    index.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(index.train_ids.begin(), index.train_ids.end());
    std::sort(index.test_ids.begin(), index.test_ids.end());
  }
  if (index.files.empty()) throw IoError(root, "no complete shadow/mask/free triplets found");
  return index;
}

ShadowTriplet load_triplet(const DatasetIndex& index, const std::string& id,
                           std::optional<std::pair<std::size_t, std::size_t>> target) {
  const auto it = index.files.find(id);
  if (it == index.files.end()) throw ContractViolation("load_triplet: unknown id '" + id + "'");
  const TripletFiles& f = it->second;
  ShadowTriplet t;
  t.id = id;
  t.shadow = load_channels(f.shadow, 3);
  Tensor<float> mask = load_channels(f.mask, 1);
  t.free = load_channels(f.free, 3);
  const Shape s = t.shadow.shape();
  if (mask.shape().h != s.h || mask.shape().w != s.w) {
    throw IoError(f.mask, "mask is " + mask.shape().str() + " but shadow image is " + s.str());
  }
  if (t.free.shape().h != s.h || t.free.shape().w != s.w) {
    throw IoError(f.free, "shadow-free image is " + t.free.shape().str() + " but shadow image is " + s.str());
  }
  if (target && (target->first != s.h || target->second != s.w)) {
    t.shadow = resize_bilinear(t.shadow, target->first, target->second);
    t.free = resize_bilinear(t.free, target->first, target->second);
    mask = resize_bilinear(mask, target->first, target->second);
  }
  t.mask = binarize(mask);
  return t;
}

Tensor<float> resize_bilinear(const Tensor<float>& t, std::size_t height, std::size_t width) {
  const Shape s = t.shape();
  if (height == 0 || width == 0) throw ContractViolation("resize_bilinear: target size must be non-zero");
  if (s.h == 0 || s.w == 0) throw ContractViolation("resize_bilinear: empty input " + s.str());
  Tensor<float> out(Shape{s.n, s.c, height, width});
  const double sy = static_cast<double>(s.h) / static_cast<double>(height);
  const double sx = static_cast<double>(s.w) / static_cast<double>(width);
  auto taps = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, n - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* src = t.plane(b, c);
      float* dst = out.plane(b, c);
      for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        taps((static_cast<double>(y) + 0.5) * sy - 0.5, s.h, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
          std::size_t x0, x1;
          double fx;
          taps((static_cast<double>(x) + 0.5) * sx - 0.5, s.w, x0, x1, fx);
          const double top = (1.0 - fx) * src[y0 * s.w + x0] + fx * src[y0 * s.w + x1];
          const double bot = (1.0 - fx) * src[y1 * s.w + x0] + fx * src[y1 * s.w + x1];
          dst[y * width + x] = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
      }
    }
  return out;
}

Tensor<float> binarize(const Tensor<float>& t, float threshold) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

Tensor<float> to_model_range(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] / 127.5f - 1.0f;
  return out;
}

Tensor<float> from_model_range(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = (image[i] + 1.0f) * 127.5f;
    out[i] = std::isnan(v) ? 0.0f : std::clamp(std::round(v), 0.0f, 255.0f);
  }
  return out;
}

}  // namespace spaformer
