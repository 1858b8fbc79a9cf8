#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crackseg/error.hpp"
#include "crackseg/png_io.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// One image/mask pair. The image is [3,H,W] in [0,1]; the mask is a strict
/// binary [1,H,W] tensor.
struct Sample {
  Tensor image;
  Tensor mask;
  std::string id;
};

struct SynthParams {
  int stroke_count = 2;
  double width_min = 4.0;
  double width_max = 7.0;
  double contrast = 0.6;     // how much darker a crack is than its background
  double noise_level = 0.02;
};

/// Synthetic crack sample: a smooth low-frequency background texture with a
/// per-pixel noise floor, crossed by dark random-walk polylines of jittered
/// width. The mask is the exact stroke support. Fully determined by the seed.
inline Sample synth_crack(uint64_t seed, int h, int w, const SynthParams& params = {}) {
  if (h < 4 || w < 4) throw ConfigError("synth_crack: image must be at least 4x4");
  if (params.stroke_count < 0) throw ConfigError("synth_crack: stroke_count must be >= 0");
  if (!(params.width_min > 0.0) || params.width_max < params.width_min)
    throw ConfigError("synth_crack: invalid width range");
  Rng rng(seed);

  // background: three random cosine waves + white noise
  struct Wave {
    double amp, wx, wy, phase;
  };
  Wave waves[3];
  for (Wave& v : waves) {
    v.amp = rng.uniform(0.04, 0.11);
    v.wx = rng.uniform(-0.12, 0.12);
    v.wy = rng.uniform(-0.12, 0.12);
    v.phase = rng.uniform(0.0, 2.0 * M_PI);
  }
  std::vector<double> base(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.72;
      for (const Wave& wv : waves) v += wv.amp * std::cos(wv.wx * x + wv.wy * y + wv.phase);
      v += params.noise_level * rng.uniform(-1.0, 1.0);
      base[static_cast<size_t>(y) * w + x] = std::clamp(v, 0.05, 0.98);
    }

  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.02, 0.02);

  std::vector<double> mask(static_cast<size_t>(h) * w, 0.0);
  std::vector<double> dark(static_cast<size_t>(h) * w, 0.0);
  for (int s = 0; s < params.stroke_count; ++s) {
    double px = rng.uniform(0.15 * w, 0.85 * w);
    double py = rng.uniform(0.15 * h, 0.85 * h);
    double angle = rng.uniform(0.0, 2.0 * M_PI);
    int steps = static_cast<int>(rng.uniform(0.45, 0.85) * std::min(h, w));
    double width0 = rng.uniform(params.width_min, params.width_max);
    for (int t = 0; t < steps; ++t) {
      angle += 0.11 * rng.normal();
      px += std::cos(angle);
      py += std::sin(angle);
      if (px < 1.0 || px > w - 2.0 || py < 1.0 || py > h - 2.0) break;
      double width = std::clamp(width0 + 0.3 * rng.normal(), params.width_min, params.width_max);
      double depth = params.contrast * rng.uniform(0.8, 1.2);
      double rad = 0.5 * width;
      int cx = static_cast<int>(std::lround(px));
      int cy = static_cast<int>(std::lround(py));
      int r = static_cast<int>(std::ceil(rad));
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int yy = cy + dy, xx = cx + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (dx * dx + dy * dy > rad * rad) continue;
          size_t i = static_cast<size_t>(yy) * w + xx;
          mask[i] = 1.0;
          dark[i] = std::max(dark[i], depth);
        }
    }
  }

  std::vector<double> image(3 * static_cast<size_t>(h) * w);
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < base.size(); ++i) {
      double v = base[i] * (1.0 + tint[c]) - dark[i];
      image[static_cast<size_t>(c) * h * w + i] = std::clamp(v, 0.0, 1.0);
    }

  Sample sample;
  sample.image = Tensor::from_data({3, h, w}, std::move(image));
  sample.mask = Tensor::from_data({1, h, w}, std::move(mask));
  std::ostringstream id;
  id << "synth-" << seed;
  sample.id = id.str();
  return sample;
}

inline std::vector<Sample> synth_dataset(uint64_t seed, int count, int h, int w,
                                         const SynthParams& params = {}) {
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synth_crack(seed + static_cast<uint64_t>(i), h, w, params));
  return out;
}

/// Loads root/{image,mask}/<id>.png pairs; masks binarized at 128.
inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path image_dir = dir / "image";
  fs::path mask_dir = dir / "mask";
  if (!fs::is_directory(image_dir) || !fs::is_directory(mask_dir))
    throw IoError("load_dataset: expected '" + (dir / "image").string() + "' and '" +
                  (dir / "mask").string() + "' directories");
  std::set<std::string> image_ids, mask_ids;
  for (const auto& e : fs::directory_iterator(image_dir))
    if (e.path().extension() == ".png") image_ids.insert(e.path().stem().string());
  for (const auto& e : fs::directory_iterator(mask_dir))
    if (e.path().extension() == ".png") mask_ids.insert(e.path().stem().string());

  std::vector<std::string> orphans;
  for (const auto& id : image_ids)
    if (!mask_ids.count(id)) orphans.push_back(id + " (missing mask)");
  for (const auto& id : mask_ids)
    if (!image_ids.count(id)) orphans.push_back(id + " (missing image)");
  if (!orphans.empty()) {
    std::ostringstream os;
    os << "load_dataset: unpaired files:";
    for (const auto& o : orphans) os << " " << o;
    throw IoError(os.str());
  }
  if (image_ids.empty()) throw IoError("load_dataset: no PNG pairs found under '" + dir.string() + "'");

  std::vector<Sample> out;
  for (const auto& id : image_ids) {
    ImageU8 img = read_png(image_dir / (id + ".png"));
    ImageU8 msk = read_png(mask_dir / (id + ".png"));
    if (img.channels == 1) {
      // promote gray image to 3 channels
      ImageU8 rgb;
      rgb.width = img.width;
      rgb.height = img.height;
      rgb.channels = 3;
      rgb.pixels.resize(rgb.size_bytes());
      for (long long i = 0; i < static_cast<long long>(img.pixels.size()); ++i)
        for (int c = 0; c < 3; ++c) rgb.pixels[i * 3 + c] = img.pixels[i];
      img = std::move(rgb);
    }
    if (msk.channels != 1) {
      // collapse RGB mask to gray by first channel (masks are stored gray)
      ImageU8 g;
      g.width = msk.width;
      g.height = msk.height;
      g.channels = 1;
      g.pixels.resize(g.size_bytes());
      for (long long i = 0; i < g.size_bytes(); ++i) g.pixels[i] = msk.pixels[i * msk.channels];
      msk = std::move(g);
    }
    if (img.width != msk.width || img.height != msk.height)
      throw IoError("load_dataset: image/mask size mismatch for id '" + id + "'");
    Sample s;
    s.image = image_to_tensor(img);
    s.mask = mask_to_tensor(msk);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

/// Train/val/test fractions; remainder pixels of the rounding go to train.
struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  uint64_t seed = 42;

  void validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0) throw ConfigError("split fractions must be nonnegative");
    if (std::fabs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split fractions must sum to 1 (got " + std::to_string(train + val + test) + ")");
  }
};

struct DatasetSplit {
  std::vector<Sample> train, val, test;
};

/// Seed-deterministic shuffle + disjoint partition.
inline DatasetSplit split_dataset(std::vector<Sample> samples, const SplitSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<size_t> idx(samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  size_t n = samples.size();
  size_t n_val = static_cast<size_t>(std::floor(spec.val * n));
  size_t n_test = static_cast<size_t>(std::floor(spec.test * n));
  size_t n_train = n - n_val - n_test;
  DatasetSplit split;
  for (size_t i = 0; i < n; ++i) {
    Sample& s = samples[idx[i]];
    if (i < n_train)
      split.train.push_back(std::move(s));
    else if (i < n_train + n_val)
      split.val.push_back(std::move(s));
    else
      split.test.push_back(std::move(s));
  }
  return split;
}

/// Fraction of mask pixels that are foreground.
inline double mask_positive_fraction(const Sample& s) {
  double pos = 0.0;
  for (double v : s.mask.data()) pos += v;
  return pos / static_cast<double>(s.mask.numel());
}

/// id -> partition name, for the optional split manifest file.
inline nlohmann::json split_manifest_json(const DatasetSplit& split) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : split.train) j[s.id] = "train";
  for (const auto& s : split.val) j[s.id] = "val";
  for (const auto& s : split.test) j[s.id] = "test";
  return j;
}

}  // namespace crackseg
