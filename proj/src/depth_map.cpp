#include "polarfuse/depth_map.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace polarfuse {

std::size_t DepthMap::valid_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < valid.size(); ++i)
        if (valid[i] != 0.0) ++n;
    return n;
}

void DepthMap::validate() const {
    if (depth.rank() != 2 || valid.rank() != 2)
        throw std::invalid_argument("DepthMap: depth and valid must be [H,W]");
    require_same_dims(depth, valid, "DepthMap");
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (valid[i] != 0.0 && valid[i] != 1.0)
            throw std::invalid_argument("DepthMap: mask values must be 0 or 1");
        if (valid[i] != 0.0 && !(std::isfinite(depth[i]) && depth[i] > 0.0))
            throw std::invalid_argument("DepthMap: valid pixel with non-positive depth");
    }
}

DepthMap DepthMap::all_valid(Tensor depth) {
    Tensor mask(depth.dims(), 1.0);
    DepthMap m{std::move(depth), std::move(mask)};
    m.validate();
    return m;
}

Tensor DepthMap::to_stack() const {
    const std::size_t h = height(), w = width();
    Tensor stack({2, h, w});
    std::memcpy(stack.data(), depth.data(), h * w * sizeof(double));
    std::memcpy(stack.data() + h * w, valid.data(), h * w * sizeof(double));
    return stack;
}

DepthMap DepthMap::from_stack(const Tensor& stack) {
    if (stack.rank() != 3 || stack.dim(0) != 2)
        throw std::invalid_argument("DepthMap::from_stack: expected [2,H,W], got " +
                                    stack.shape_str());
    const std::size_t h = stack.dim(1), w = stack.dim(2);
    DepthMap m{Tensor({h, w}), Tensor({h, w})};
    std::memcpy(m.depth.data(), stack.data(), h * w * sizeof(double));
    std::memcpy(m.valid.data(), stack.data() + h * w, h * w * sizeof(double));
    m.validate();
    return m;
}

}  // namespace polarfuse
