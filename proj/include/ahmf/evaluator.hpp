#pragma once

// MAE / RMSE on 8-bit quantized depth, and the benchmark driver that runs a
// model over a manifest for a list of degradations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "ahmf/data.hpp"
#include "ahmf/model.hpp"

namespace ahmf {

struct Gray8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

// round(clip(x, 0, 1) * 255) with halves rounded up.
inline std::uint8_t quantize8(double x) {
  if (!(x > 0.0)) return 0;  // also maps NaN to 0
  if (x >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::floor(x * 255.0 + 0.5));
}

inline Gray8 quantize8(const Tensorf& depth) {
  const Shape& s = depth.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("quantize8: expected a 1 x 1 x H x W depth map, got " +
                     s.str());
  }
  Gray8 img{s.w, s.h, std::vector<std::uint8_t>(s.numel())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = quantize8(static_cast<double>(depth.data()[i]));
  }
  return img;
}

inline double dequantize8(std::uint8_t v) { return v / 255.0; }

namespace detail {
inline void require_same(const Gray8& a, const Gray8& b, const char* what) {
  if (a.width != b.width || a.height != b.height ||
      a.pixels.size() != b.pixels.size()) {
    throw ShapeError(std::string(what) + ": image sizes differ (" +
                     std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
}
}  // namespace detail

// Both metrics in 8-bit units. Integer accumulation keeps them exact.
inline double mae(const Gray8& a, const Gray8& b) {
  detail::require_same(a, b, "mae");
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    acc += static_cast<std::uint64_t>(std::abs(int(a.pixels[i]) - int(b.pixels[i])));
  }
  return static_cast<double>(acc) / static_cast<double>(a.pixels.size());
}

inline double rmse(const Gray8& a, const Gray8& b) {
  detail::require_same(a, b, "rmse");
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const std::int64_t d = int(a.pixels[i]) - int(b.pixels[i]);
    acc += static_cast<std::uint64_t>(d * d);
  }
  return std::sqrt(static_cast<double>(acc) / static_cast<double>(a.pixels.size()));
}

struct EvalRow {
  std::string image;
  int scale = 0;
  std::string degradation;
  double mae = 0;
  double rmse = 0;
  double seconds = 0;  // wall-clock for the forward pass
};

struct EvalAverage {
  int scale = 0;
  std::string degradation;
  double mae = 0;
  double rmse = 0;
  std::size_t count = 0;
};

// Average MAE published for full-scale training on the Middlebury 2005 test
// images with bicubic degradation; shown for reference, never asserted.
inline double published_reference_mae(int scale) {
  switch (scale) {
    case 4: return 0.157;
    case 8: return 0.327;
    case 16: return 0.706;
    default: return -1.0;
  }
}

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> failures;

  void sort_rows() {
    std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
      return std::tie(a.image, a.scale, a.degradation) <
             std::tie(b.image, b.scale, b.degradation);
    });
  }

  std::vector<EvalAverage> averages() const {
    std::map<std::pair<int, std::string>, EvalAverage> groups;
    for (const auto& r : rows) {
      auto& g = groups[{r.scale, r.degradation}];
      g.scale = r.scale;
      g.degradation = r.degradation;
      g.mae += r.mae;
      g.rmse += r.rmse;
      ++g.count;
    }
    std::vector<EvalAverage> out;
    for (auto& [key, g] : groups) {
      g.mae /= static_cast<double>(g.count);
      g.rmse /= static_cast<double>(g.count);
      out.push_back(g);
    }
    return out;
  }

  // Deterministic TSV: '#' comment lines, the column header, one row per
  // (image, scale, degradation), then "average" rows per (scale, degradation).
  void write_tsv(std::ostream& os) const {
    os << "# published reference average MAE (Middlebury 2005, bicubic, "
          "full-scale training; informational only): x4 0.157, x8 0.327, "
          "x16 0.706\n";
    for (const auto& f : failures) os << "# failed: " << f << '\n';
    os << "image\tscale\tdegradation\tmae\trmse\n";
    char buf[64];
    auto line = [&](const std::string& name, int scale, const std::string& deg,
                    double m, double r) {
      std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\n", m, r);
      os << name << '\t' << scale << '\t' << deg << buf;
    };
    for (const auto& r : rows) line(r.image, r.scale, r.degradation, r.mae, r.rmse);
    for (const auto& a : averages()) {
      line("average", a.scale, a.degradation, a.mae, a.rmse);
    }
  }

  // Aligned human-readable table including timings.
  void render_table(std::ostream& os) const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %5s %-10s %10s %10s %10s\n", "image",
                  "scale", "kind", "MAE", "RMSE", "ms");
    os << buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%-24s %5d %-10s %10.4f %10.4f %10.1f\n",
                    r.image.c_str(), r.scale, r.degradation.c_str(), r.mae,
                    r.rmse, r.seconds * 1e3);
      os << buf;
    }
    for (const auto& a : averages()) {
      const double ref = published_reference_mae(a.scale);
      std::snprintf(buf, sizeof buf, "%-24s %5d %-10s %10.4f %10.4f", "average",
                    a.scale, a.degradation.c_str(), a.mae, a.rmse);
      os << buf;
      if (ref > 0 && a.degradation == "bicubic") {
        std::snprintf(buf, sizeof buf, "   (published full-scale MAE %.3f)", ref);
        os << buf;
      }
      os << '\n';
    }
    for (const auto& f : failures) os << "failed: " << f << '\n';
  }
};

// Runs `model` on every manifest entry under every spec and scores the
// quantized prediction against the quantized ground truth. Missing or
// unreadable inputs are listed in failures; the rest continue. Predictions
// are written to out_dir as <image>_x<scale>_<kind>.pgm when out_dir is set.
inline EvalReport benchmark(const AhmfModel<float>& model,
                            const std::vector<ManifestEntry>& manifest,
                            const std::vector<DegradationSpec>& specs,
                            const std::string& out_dir = "") {
  EvalReport report;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  for (const auto& spec : specs) {
    if (spec.scale != model.config().scale) {
      report.failures.push_back("scale " + std::to_string(spec.scale) +
                                " does not match checkpoint scale " +
                                std::to_string(model.config().scale));
      continue;
    }
    for (const auto& entry : manifest) {
      DepthSample sample;
      try {
        sample = load_sample(entry.guidance_path, entry.depth_path, spec,
                             entry.max_value);
      } catch (const std::exception& e) {
        report.failures.push_back(e.what());
        continue;
      }
      const auto start = std::chrono::steady_clock::now();
      Tensorf pred;
      {
        NoGradGuard no_grad;
        pred = model.forward(sample.lr_depth, sample.guidance);
      }
      const auto stop = std::chrono::steady_clock::now();
      const Gray8 p8 = quantize8(pred);
      const Gray8 g8 = quantize8(sample.gt_depth);
      EvalRow row;
      row.image = sample.name;
      row.scale = spec.scale;
      row.degradation = to_string(spec.kind);
      row.mae = mae(p8, g8);
      row.rmse = rmse(p8, g8);
      row.seconds = std::chrono::duration<double>(stop - start).count();
      report.rows.push_back(row);
      if (!out_dir.empty()) {
        Image img{p8.width, p8.height, 1, 255, {}};
        img.samples.assign(p8.pixels.begin(), p8.pixels.end());
        write_pnm((std::filesystem::path(out_dir) /
                   (sample.name + "_x" + std::to_string(spec.scale) + "_" +
                    row.degradation + ".pgm"))
                      .string(),
                  img);
      }
    }
  }
  report.sort_rows();
  return report;
}

}  // namespace ahmf
