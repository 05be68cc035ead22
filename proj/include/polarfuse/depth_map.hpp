#pragma once

#include "polarfuse/tensor.hpp"

namespace polarfuse {

// Metric depth raster in millimetres with a per-pixel validity mask.
// Depth is finite and > 0 wherever valid; invalid pixels hold 0 by
// convention. Serialized as a [2,H,W] PFT1 stack (depth; valid).
struct DepthMap {
    Tensor depth;  // [H,W] mm
    Tensor valid;  // [H,W] 0 or 1

    std::size_t height() const { return depth.dim(0); }
    std::size_t width() const { return depth.dim(1); }

    std::size_t valid_count() const;
    void validate() const;

    static DepthMap all_valid(Tensor depth);

    Tensor to_stack() const;
    static DepthMap from_stack(const Tensor& stack);
};

}  // namespace polarfuse
