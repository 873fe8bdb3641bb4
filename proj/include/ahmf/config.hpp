#pragma once

#include <stdexcept>
#include <string>

namespace ahmf {

enum class FusionKind { mmaf, addition, concatenation };
enum class Collaboration { bidirectional, forward_only, backward_only, none };

struct ModelConfig {
  int scale = 4;              // upscale factor, a power of two >= 4
  int depth = 4;              // m: extraction / fusion levels
  int width = 64;             // n: feature channels
  int guidance_channels = 3;  // C
  bool gru_shared = true;     // one FGRU / BGRU parameter set across levels
  FusionKind fusion = FusionKind::mmaf;
  Collaboration collaboration = Collaboration::bidirectional;

  // log2(scale): number of inverse-pixel-shuffle / pixel-shuffle stages.
  int stages() const {
    int s = 0;
    for (int v = scale; v > 1; v >>= 1) ++s;
    return s;
  }
  // 1x1 / 3x3 / 5x5 at 4x / 8x / 16x.
  int down_kernel() const { return 2 * stages() - 3; }
  int up_kernel() const { return down_kernel() < 3 ? 3 : down_kernel(); }

  void validate() const {
    if (scale < 4 || (scale & (scale - 1)) != 0) {
      throw std::invalid_argument("model config: scale must be a power of two >= 4, got " +
                                  std::to_string(scale));
    }
    if (depth < 1) {
      throw std::invalid_argument("model config: depth m must be >= 1, got " +
                                  std::to_string(depth));
    }
    if (width < 1) {
      throw std::invalid_argument("model config: width n must be >= 1, got " +
                                  std::to_string(width));
    }
    if (guidance_channels < 1) {
      throw std::invalid_argument("model config: guidance channels must be >= 1");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named ablation variants: full | add | concat | no-bhfc | fwd-only | bwd-only.
inline ModelConfig with_ablation(ModelConfig cfg, const std::string& name) {
  cfg.fusion = FusionKind::mmaf;
  cfg.collaboration = Collaboration::bidirectional;
  if (name == "full") {
  } else if (name == "add") {
    cfg.fusion = FusionKind::addition;
  } else if (name == "concat") {
    cfg.fusion = FusionKind::concatenation;
  } else if (name == "no-bhfc") {
    cfg.collaboration = Collaboration::none;
  } else if (name == "fwd-only") {
    cfg.collaboration = Collaboration::forward_only;
  } else if (name == "bwd-only") {
    cfg.collaboration = Collaboration::backward_only;
  } else {
    throw std::invalid_argument("unknown ablation '" + name +
                                "' (expected full|add|concat|no-bhfc|fwd-only|bwd-only)");
  }
  return cfg;
}

inline std::string ablation_name(const ModelConfig& cfg) {
  if (cfg.fusion == FusionKind::addition) return "add";
  if (cfg.fusion == FusionKind::concatenation) return "concat";
  switch (cfg.collaboration) {
    case Collaboration::none: return "no-bhfc";
    case Collaboration::forward_only: return "fwd-only";
    case Collaboration::backward_only: return "bwd-only";
    case Collaboration::bidirectional: break;
  }
  return "full";
}

inline const char* const kAblations[] = {"full",    "add",      "concat",
                                         "no-bhfc", "fwd-only", "bwd-only"};

}  // namespace ahmf
