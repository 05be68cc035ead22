#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polarfuse/depth_map.hpp"
#include "polarfuse/params.hpp"
#include "polarfuse/polarization.hpp"
#include "polarfuse/ppfb.hpp"

namespace polarfuse {

// Fusion/architecture variants used by the ablation experiments.
//   Ppft        tri-encoder front end, fusion block at every stage
//   RgbGuidance same network, aolp/dolp input channels replaced by intensity
//   ShallowPpfb tri-encoder, single fusion block at the first stage
//   NoPpft      plain 7-channel concat encoder, no fusion blocks
//   EarlyFusion same as NoPpft (conventionally run with foundation weights)
enum class Ablation { Ppft, NoPpft, RgbGuidance, EarlyFusion, ShallowPpfb };

Ablation ablation_from_string(const std::string& s);
std::string to_string(Ablation a);

struct ModelConfig {
    std::vector<std::size_t> widths = {8, 16, 32};  // per-stage channels, strictly increasing
    std::size_t guidance_channels = 6;
    double dropout_p = 0.1;
    double lambda_init = 1.0;
    double d_max = 10000.0;  // mm; output clamp and internal depth normalization
    Ablation ablation = Ablation::Ppft;
    std::vector<std::string> freeze_prefixes;

    std::size_t stages() const { return widths.size(); }
    bool tri_encoder() const;
    bool block_at(std::size_t stage) const;
    void validate() const;
};

// Fresh parameter set for the configured architecture. Conv/linear weights
// are Kaiming-uniform seeded per tensor name, biases zero, lambda as
// configured. Names:
//   enc.{concat,depth,guidance}.{weight,bias}
//   backbone.<i>.{weight,bias}
//   ppfb.<i>.<layer>.{weight,bias}, ppfb.<i>.lambda
//   prompt.<i>.proj.{weight,bias}
//   decoder.up<j>.{weight,bias}, decoder.head.{weight,bias}
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

void apply_freeze(ParamStore& params, const std::vector<std::string>& prefixes);

// d_hat = f(P, d; theta). Inference mode: deterministic, dropout off; the
// result mask is all-true and depths are clamped to (0, d_max].
DepthMap enhance(const GuidanceTensor& guidance, const DepthMap& sensor,
                 const ParamStore& params, const ModelConfig& config);

// Mean over gt's valid mask of |e| + e^2, e in millimetres.
double loss(const DepthMap& pred, const DepthMap& gt);

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> skipped_missing;
    std::vector<std::string> skipped_shape_mismatch;
    std::vector<std::string> frozen;
};

// Copies name-matched, shape-matched archive tensors into params. Names
// under "ppfb." are never loaded (fusion blocks always train from fresh
// init). freeze_prefixes mark matching entries non-trainable afterwards.
LoadReport load_pretrained(ParamStore& params, const ParamStore& archive,
                           const std::vector<std::string>& freeze_prefixes);

struct SgdOptions {
    double lr = 0.02;
    double clip_norm = 1.0;  // global L2 clip over trainable grads; <= 0 disables
};

struct StepResult {
    double loss_value = 0.0;
    double rmse = 0.0;  // mm, over the step's gt mask
    double mae = 0.0;   // mm
};

// One gradient-descent step on the Eq-style loss over trainable parameters.
// Frozen parameters stay bit-identical. Throws std::runtime_error on a
// non-finite loss, leaving params untouched.
StepResult train_step(ParamStore& params, const GuidanceTensor& guidance, const DepthMap& sensor,
                      const DepthMap& gt, const ModelConfig& config, const SgdOptions& opt,
                      std::uint64_t seed);

}  // namespace polarfuse
