#pragma once

// Depth / guidance samples, degradation synthesis, dataset manifests and
// training patch sampling. All tensors here are float, normalized to [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ahmf/image_io.hpp"
#include "ahmf/random.hpp"
#include "ahmf/resample.hpp"

namespace ahmf {

enum class DegradationKind { bicubic, direct, tof_like };

inline std::string to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::bicubic: return "bicubic";
    case DegradationKind::direct: return "direct";
    case DegradationKind::tof_like: return "tof_like";
  }
  return "?";
}

inline DegradationKind parse_degradation(const std::string& s) {
  if (s == "bicubic") return DegradationKind::bicubic;
  if (s == "direct") return DegradationKind::direct;
  if (s == "tof_like" || s == "tof-like") return DegradationKind::tof_like;
  throw std::invalid_argument("unknown degradation '" + s +
                              "' (expected bicubic|direct|tof_like)");
}

struct DegradationSpec {
  DegradationKind kind = DegradationKind::bicubic;
  int scale = 4;
  double noise_sigma = 5.0;  // 8-bit units; tof_like only
  std::uint64_t seed = 0;

  std::string str() const {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << " scale=" << scale;
    if (kind == DegradationKind::tof_like) {
      os << " sigma=" << noise_sigma << " seed=" << seed;
    }
    return os.str();
  }
};

struct DepthSample {
  std::string name;
  Tensorf guidance;  // 1 x C x aH x aW
  Tensorf lr_depth;  // 1 x 1 x H x W
  Tensorf gt_depth;  // 1 x 1 x aH x aW
  double max_value = 255.0;
};

inline Tensorf clip01(Tensorf t) {
  for (float& v : t.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

// High-resolution depth (N x 1 x aH x aW) -> low-resolution (N x 1 x H x W).
inline Tensorf degrade(const Tensorf& gt, const DegradationSpec& spec) {
  const Shape& s = gt.shape();
  const int a = spec.scale;
  if (a < 1 || s.h % a != 0 || s.w % a != 0) {
    throw ShapeError("degrade: " + s.str() + " not divisible by scale " +
                     std::to_string(a));
  }
  if (spec.noise_sigma < 0) {
    throw std::invalid_argument("degrade: noise sigma must be >= 0");
  }
  const int h = s.h / a;
  const int w = s.w / a;
  if (spec.kind == DegradationKind::direct) {
    Tensorf out = Tensorf::zeros(Shape{s.n, s.c, h, w});
    auto dst = out.mutable_data();
    for (int p = 0; p < s.n * s.c; ++p) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          dst[(static_cast<std::size_t>(p) * h + y) * w + x] =
              gt.data()[(static_cast<std::size_t>(p) * s.h + y * a) * s.w +
                        x * a];
        }
      }
    }
    return clip01(std::move(out));
  }
  Tensorf out = clip01(bicubic_resize(gt, h, w));
  if (spec.kind == DegradationKind::tof_like) {
    Rng rng(spec.seed);
    const double sigma = spec.noise_sigma / 255.0;
    for (float& v : out.mutable_data()) {
      v = static_cast<float>(v + sigma * rng.normal());
    }
    out = clip01(std::move(out));
  }
  return out;
}

// Interleaved image -> 1 x C x H x W tensor, divided by max_value.
inline Tensorf image_to_tensor(const Image& img, double max_value) {
  Tensorf t =
      Tensorf::zeros(Shape{1, img.channels, img.height, img.width});
  auto dst = t.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      dst[c * plane + i] = static_cast<float>(
          img.samples[i * img.channels + c] / max_value);
    }
  }
  return clip01(std::move(t));
}

// Round-half-up quantization of a [0, 1] plane to 0..max_value.
inline Image tensor_to_image(const Tensorf& t, int max_value) {
  const Shape& s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw ShapeError("tensor_to_image: expected 1 x {1,3} x H x W, got " +
                     s.str());
  }
  Image img;
  img.width = s.w;
  img.height = s.h;
  img.channels = s.c;
  img.maxval = max_value;
  img.samples.resize(s.numel());
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < s.c; ++c) {
      const double v = std::clamp(static_cast<double>(t.data()[c * plane + i]),
                                  0.0, 1.0);
      img.samples[i * s.c + c] =
          static_cast<std::uint16_t>(std::floor(v * max_value + 0.5));
    }
  }
  return img;
}

inline Tensorf crop(const Tensorf& t, int y0, int x0, int h, int w) {
  const Shape& s = t.shape();
  if (y0 < 0 || x0 < 0 || y0 + h > s.h || x0 + w > s.w) {
    throw ShapeError("crop: window exceeds " + s.str());
  }
  Tensorf out = Tensorf::zeros(Shape{s.n, s.c, h, w});
  auto dst = out.mutable_data();
  for (int p = 0; p < s.n * s.c; ++p) {
    for (int y = 0; y < h; ++y) {
      const float* src =
          t.data().data() + (static_cast<std::size_t>(p) * s.h + y0 + y) * s.w + x0;
      std::copy(src, src + w,
                dst.begin() + (static_cast<std::size_t>(p) * h + y) * w);
    }
  }
  return out;
}

// Mirror-pads (without repeating the edge sample) up to at least h x w.
inline Tensorf reflect_pad_to(const Tensorf& t, int h, int w) {
  const Shape& s = t.shape();
  if (s.h >= h && s.w >= w) return t;
  const int oh = std::max(h, s.h);
  const int ow = std::max(w, s.w);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i %= period;
    return i < n ? i : period - i;
  };
  Tensorf out = Tensorf::zeros(Shape{s.n, s.c, oh, ow});
  auto dst = out.mutable_data();
  for (int p = 0; p < s.n * s.c; ++p) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        dst[(static_cast<std::size_t>(p) * oh + y) * ow + x] =
            t.data()[(static_cast<std::size_t>(p) * s.h + reflect(y, s.h)) *
                         s.w +
                     reflect(x, s.w)];
      }
    }
  }
  return out;
}

// Writes a 1 x 1 x H x W depth map as PGM quantized to 0..max_value
// (16-bit container when max_value > 255).
inline void save_depth(const std::string& path, const Tensorf& depth,
                       double max_value) {
  const long mv = std::lround(max_value);
  if (mv < 1 || mv > 65535) {
    throw std::invalid_argument(path + ": max_value " +
                                std::to_string(max_value) +
                                " outside 1..65535");
  }
  if (depth.shape().c != 1) {
    throw ShapeError(path + ": depth must have 1 channel, got " +
                     depth.shape().str());
  }
  write_pnm(path, tensor_to_image(depth, static_cast<int>(mv)));
}

// A high-resolution guidance / depth pair before degradation.
struct HrPair {
  std::string name;
  Tensorf guidance;
  Tensorf depth;
  double max_value = 255.0;
};

// Loads both images, normalizes depth by max_value (file maxval when
// max_value <= 0) and crops both to the largest multiple of `scale`.
inline HrPair load_pair(const std::string& guidance_path,
                        const std::string& depth_path, int scale,
                        double max_value = 0.0) {
  const Image guide = read_pnm(guidance_path);
  const Image depth = read_pnm(depth_path);
  if (depth.channels != 1) {
    throw FormatError(depth_path + ": depth must be a grayscale PGM");
  }
  if (guide.width != depth.width || guide.height != depth.height) {
    throw FormatError(guidance_path + ": guidance is " +
                      std::to_string(guide.width) + "x" +
                      std::to_string(guide.height) + " but depth " +
                      depth_path + " is " + std::to_string(depth.width) + "x" +
                      std::to_string(depth.height));
  }
  const int h = depth.height / scale * scale;
  const int w = depth.width / scale * scale;
  if (h == 0 || w == 0) {
    throw FormatError(depth_path + ": image smaller than scale " +
                      std::to_string(scale));
  }
  HrPair pair;
  pair.name = std::filesystem::path(depth_path).stem().string();
  pair.max_value = max_value > 0 ? max_value : depth.maxval;
  pair.guidance = crop(image_to_tensor(guide, guide.maxval), 0, 0, h, w);
  pair.depth = crop(image_to_tensor(depth, pair.max_value), 0, 0, h, w);
  return pair;
}

inline DepthSample make_sample(const HrPair& pair,
                               const DegradationSpec& spec) {
  DepthSample s;
  s.name = pair.name;
  s.guidance = pair.guidance;
  s.gt_depth = pair.depth;
  s.lr_depth = degrade(pair.depth, spec);
  s.max_value = pair.max_value;
  return s;
}

inline DepthSample load_sample(const std::string& guidance_path,
                               const std::string& depth_path,
                               const DegradationSpec& spec,
                               double max_value = 0.0) {
  return make_sample(load_pair(guidance_path, depth_path, spec.scale, max_value),
                     spec);
}

struct ManifestEntry {
  std::string guidance_path;
  std::string depth_path;
  double max_value = 255.0;
  int line = 0;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(const std::string& what, std::vector<int> lines)
      : std::runtime_error(what), lines_(std::move(lines)) {}
  const std::vector<int>& lines() const { return lines_; }

 private:
  std::vector<int> lines_;
};

// "guidance<TAB>depth<TAB>max_value" per line; blank lines and '#' comments
// are skipped; relative paths resolve against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(path + ": cannot open manifest", {});
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::vector<int> bad;
  std::ostringstream problems;
  std::string line;
  int number = 0;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    ManifestEntry e;
    e.line = number;
    bool ok = fields.size() == 3 && !fields[0].empty() && !fields[1].empty();
    if (ok) {
      try {
        std::size_t used = 0;
        e.max_value = std::stod(fields[2], &used);
        ok = used == fields[2].size() && e.max_value > 0;
      } catch (...) {
        ok = false;
      }
    }
    if (!ok) {
      bad.push_back(number);
      problems << "\n  line " << number << ": expected guidance<TAB>depth<TAB>max_value";
      continue;
    }
    e.guidance_path = resolve(fields[0]);
    e.depth_path = resolve(fields[1]);
    entries.push_back(e);
  }
  if (!bad.empty()) {
    throw ManifestError(path + ": malformed lines" + problems.str(), bad);
  }
  return entries;
}

struct TrainingBatch {
  Tensorf guidance;  // B x C x P x P
  Tensorf lr_depth;  // B x 1 x P/a x P/a
  Tensorf gt_depth;  // B x 1 x P x P
};

// Random aligned crops; the low-resolution input is synthesized per crop.
// High-resolution offsets are multiples of the scale so both grids align.
class PatchSampler {
 public:
  PatchSampler(std::vector<HrPair> set, int patch, int batch,
               DegradationSpec spec, std::uint64_t seed)
      : set_(std::move(set)), patch_(patch), batch_(batch), spec_(spec),
        rng_(seed) {
    if (set_.empty()) throw std::invalid_argument("patch sampler: empty dataset");
    if (patch_ < spec_.scale || patch_ % spec_.scale != 0) {
      throw std::invalid_argument("patch sampler: patch " +
                                  std::to_string(patch_) +
                                  " not a multiple of scale " +
                                  std::to_string(spec_.scale));
    }
    if (batch_ < 1) throw std::invalid_argument("patch sampler: batch < 1");
    for (auto& p : set_) {
      p.guidance = reflect_pad_to(p.guidance, patch_, patch_);
      p.depth = reflect_pad_to(p.depth, patch_, patch_);
    }
  }

  struct Offset {
    std::size_t image;
    int y;
    int x;
  };

  TrainingBatch next() { return next(nullptr); }

  // Also reports the chosen crops when `offsets` is non-null.
  TrainingBatch next(std::vector<Offset>* offsets) {
    const int channels = set_.front().guidance.shape().c;
    const int lp = patch_ / spec_.scale;
    std::vector<float> guide;
    std::vector<float> lr;
    std::vector<float> gt;
    for (int b = 0; b < batch_; ++b) {
      const std::size_t idx = rng_.below(set_.size());
      const HrPair& pair = set_[idx];
      const Shape& s = pair.depth.shape();
      const int ny = (s.h - patch_) / spec_.scale + 1;
      const int nx = (s.w - patch_) / spec_.scale + 1;
      const int y = static_cast<int>(rng_.below(ny)) * spec_.scale;
      const int x = static_cast<int>(rng_.below(nx)) * spec_.scale;
      if (offsets) offsets->push_back({idx, y, x});
      const Tensorf g = crop(pair.guidance, y, x, patch_, patch_);
      const Tensorf d = crop(pair.depth, y, x, patch_, patch_);
      DegradationSpec spec = spec_;
      spec.seed = rng_.next_u64();
      const Tensorf l = degrade(d, spec);
      if (g.shape().c != channels) {
        throw ShapeError("patch sampler: mixed guidance channel counts");
      }
      guide.insert(guide.end(), g.data().begin(), g.data().end());
      gt.insert(gt.end(), d.data().begin(), d.data().end());
      lr.insert(lr.end(), l.data().begin(), l.data().end());
    }
    return {Tensorf(Shape{batch_, channels, patch_, patch_}, std::move(guide)),
            Tensorf(Shape{batch_, 1, lp, lp}, std::move(lr)),
            Tensorf(Shape{batch_, 1, patch_, patch_}, std::move(gt))};
  }

  const DegradationSpec& spec() const { return spec_; }

 private:
  std::vector<HrPair> set_;
  int patch_;
  int batch_;
  DegradationSpec spec_;
  Rng rng_;
};

}  // namespace ahmf
