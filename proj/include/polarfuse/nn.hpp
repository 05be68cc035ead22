#pragma once

#include <cstdint>
#include <cstddef>

#include "polarfuse/tensor.hpp"

namespace polarfuse {

struct LinearLayer {
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
    bool trainable = true;

    LinearLayer() = default;
    LinearLayer(std::size_t in, std::size_t out);
    void check_consistent() const;
};

// y = x W^T + b applied over the trailing dimension of x.
Tensor linear(const LinearLayer& layer, const Tensor& x);

// Max-stabilized softmax along `axis`; outputs are positive and sum to 1.
Tensor softmax(const Tensor& x, std::size_t axis);

// [C,H,W] -> [C]; out[c] = mean over the spatial plane.
Tensor global_avg_pool(const Tensor& x);

// Training: zero each element with probability p and scale survivors by
// 1/(1-p); the mask is a pure function of (dims, p, seed). Inference: identity.
Tensor dropout(const Tensor& x, double p, bool training, std::uint64_t seed);

// The mask of multipliers dropout applies (0 or 1/(1-p)); backward reuses it.
Tensor dropout_mask(const std::vector<std::size_t>& dims, double p, std::uint64_t seed);

// --- kernels used by the fusion block and the depth network ---

// Y[m,n] = sum_k W[m,k] Z[k,n] (+ bias[m] when bias != nullptr).
void matmul(Tensor& y, const Tensor& w, const Tensor& z, const Tensor* bias);

// dW += dY Z^T, db += row sums of dY, dZ += W^T dY (any output may be null).
void matmul_backward(const Tensor& w, const Tensor& z, const Tensor& dy,
                     Tensor* dw, Tensor* db, Tensor* dz);

struct ConvLayer {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t stride = 1;  // 1 or 2
    Tensor weight;  // [out, in, 3, 3]
    Tensor bias;    // [out]

    ConvLayer() = default;
    ConvLayer(std::size_t in, std::size_t out, std::size_t stride);
};

// 3x3 convolution, padding 1, stride 1 or 2. [Cin,H,W] -> [Cout,Hs,Ws].
Tensor conv3x3(const ConvLayer& layer, const Tensor& x);
void conv3x3_backward(const ConvLayer& layer, const Tensor& x, const Tensor& dy,
                      Tensor* dx, Tensor* dw, Tensor* db);

Tensor relu(const Tensor& x);
// dx from the post-activation value y: dx = dy where y > 0.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

// [C,H,W] -> [C,2H,2W] nearest-neighbor; backward sums each 2x2 cell.
Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& dy);

// [C,H,W] -> [C,H/2,W/2], mean of each 2x2 cell (H, W even).
Tensor avgpool2(const Tensor& x);
Tensor avgpool2_backward(const Tensor& dy);

// Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
void kaiming_uniform_fill(Tensor& weight, std::size_t fan_in, std::uint64_t seed);

}  // namespace polarfuse
