#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "polarfuse/nn.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse {

// Prompt/feature pair flowing through the fusion chain. Both are [C,H,W];
// each spatial position is one token with a C-dim channel vector.
struct FusionState {
    Tensor prompt;   // M
    Tensor feature;  // X
};

// Parameters of one fusion block.
//
// Stage 1 (feature update): per token, [k;q;v] = w_kqv([M;X]), attention
// weights a = lambda * softmax(fc_attn([q;k])) over channels, and
// [X*; Mx] = dropout(fc_d(a (*) v)).
// Stage 2 (prompt update): [s_q; s_k] = global average over tokens of
// fc_stats(M + X), and M* = Mx + fc_out((s_q*M + s_k*X) (*) k).
struct PpfbParams {
    LinearLayer w_kqv;     // 2C -> 3C, packed [W_k; W_q; W_v]
    LinearLayer fc_attn;   // 2C -> C
    LinearLayer fc_d;      // C -> 2C, dropout applied to its output
    LinearLayer fc_stats;  // C -> 2C
    LinearLayer fc_out;    // C -> C
    double lambda = 1.0;   // learnable post-softmax scale, > 0
    double dropout_p = 0.1;

    PpfbParams() = default;
    explicit PpfbParams(std::size_t channels);
    std::size_t channels() const { return fc_out.out_features; }
    void check() const;
};

// Intermediates needed by the backward pass; filled by ppfb_forward.
struct PpfbCache {
    bool valid = false;
    bool training = false;
    std::size_t C = 0, H = 0, W = 0, T = 0;
    double lambda = 0.0;
    Tensor z;         // [2C,T] concatenated (M;X)
    Tensor kqv;       // [3C,T]
    Tensor smax;      // [C,T] softmax over channels
    Tensor fused;     // [C,T] a (*) v
    Tensor mask;      // [2C,T] dropout multipliers; empty when not applied
    Tensor wbar;      // [C] token mean of M+X
    Tensor svec;      // [2C] (s_q; s_k)
    Tensor combined;  // [C,T] (s_q*M + s_k*X) (*) k
};

struct PpfbGrads {
    Tensor d_prompt;   // [C,H,W]
    Tensor d_feature;  // [C,H,W]
    PpfbParams param;  // gradient in each layer slot; .lambda holds dlambda
};

FusionState ppfb_forward(const FusionState& state, const PpfbParams& params,
                         std::uint64_t dropout_seed, bool training, PpfbCache* cache = nullptr);

// Exact analytic gradients of (d_prompt_out, d_feature_out) w.r.t. both
// inputs and all parameters. Requires the cache of a paired forward call.
PpfbGrads ppfb_backward(const PpfbParams& params, const PpfbCache& cache,
                        const Tensor& d_prompt_out, const Tensor& d_feature_out);

using StageTransform = std::function<Tensor(const Tensor&)>;

struct ChainResult {
    Tensor final_feature;
    std::vector<FusionState> stage_outputs;  // (M*, X*) of each block, for skips
};

// Alternates fusion blocks and encoder transforms:
//   (M*_i, X*_i) = ppfb(M_i, X_i);  X_{i+1} = encoders[i](X*_i);
//   M_{i+1} = prompt_resamplers[i](M*_i).
// prompt_resamplers may be empty (identity) or have blocks.size()-1 entries.
ChainResult chain_forward(const FusionState& initial, const std::vector<PpfbParams>& blocks,
                          const std::vector<StageTransform>& encoders,
                          const std::vector<StageTransform>& prompt_resamplers,
                          std::uint64_t dropout_seed, bool training);

// Seeded Kaiming-uniform init of all layers, zero biases, lambda = lambda_init.
PpfbParams init_ppfb(std::size_t channels, double lambda_init, double dropout_p,
                     std::uint64_t seed);

}  // namespace polarfuse
