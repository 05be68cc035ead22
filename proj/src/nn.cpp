#include "polarfuse/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "polarfuse/rng.hpp"

namespace polarfuse {

LinearLayer::LinearLayer(std::size_t in, std::size_t out)
    : in_features(in), out_features(out), weight({out, in}), bias({out}) {}

void LinearLayer::check_consistent() const {
    if (weight.rank() != 2 || weight.dim(0) != out_features || weight.dim(1) != in_features)
        throw std::invalid_argument("LinearLayer: weight dims inconsistent with feature counts");
    if (bias.rank() != 1 || bias.dim(0) != out_features)
        throw std::invalid_argument("LinearLayer: bias dims inconsistent with feature counts");
}

Tensor linear(const LinearLayer& layer, const Tensor& x) {
    layer.check_consistent();
    if (x.rank() == 0 || x.dim(x.rank() - 1) != layer.in_features)
        throw std::invalid_argument("linear: trailing dim " +
                                    std::to_string(x.rank() ? x.dim(x.rank() - 1) : 0) +
                                    " != in_features " + std::to_string(layer.in_features));
    const std::size_t in = layer.in_features;
    const std::size_t out = layer.out_features;
    const std::size_t rows = x.size() / in;

    std::vector<std::size_t> ydims(x.dims());
    ydims.back() = out;
    Tensor y(ydims);

    const double* w = layer.weight.data();
    const double* b = layer.bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * in;
        double* yr = y.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* wo = w + o * in;
            for (std::size_t k = 0; k < in; ++k) acc += wo[k] * xr[k];
            yr[o] = acc;
        }
    }
    return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range");
    std::size_t n = x.dim(axis);
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
    std::size_t outer = x.size() / (n * inner);

    Tensor y(x.dims());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const double* xs = x.data() + o * n * inner + i;
            double* ys = y.data() + o * n * inner + i;
            double mx = xs[0];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xs[k * inner]);
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                double e = std::exp(xs[k * inner] - mx);
                ys[k * inner] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < n; ++k) ys[k * inner] /= sum;
        }
    }
    return y;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("global_avg_pool: rank-3 input required");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y({c});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = x.data() + ch * h * w;
        double acc = 0.0;
        for (std::size_t i = 0; i < h * w; ++i) acc += p[i];
        y[ch] = acc * inv;
    }
    return y;
}

Tensor dropout_mask(const std::vector<std::size_t>& dims, double p, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
    Tensor mask(dims, 1.0);
    if (p == 0.0) return mask;
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    return mask;
}

Tensor dropout(const Tensor& x, double p, bool training, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
    if (!training || p == 0.0) return x;
    Tensor mask = dropout_mask(x.dims(), p, seed);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
    return y;
}

void matmul(Tensor& y, const Tensor& w, const Tensor& z, const Tensor* bias) {
    const std::size_t m = w.dim(0), k = w.dim(1);
    if (z.dim(0) != k) throw std::invalid_argument("matmul: inner dims disagree");
    const std::size_t n = z.dim(1);
    if (y.rank() != 2 || y.dim(0) != m || y.dim(1) != n)
        y = Tensor({m, n});
    for (std::size_t r = 0; r < m; ++r) {
        double* yr = y.data() + r * n;
        const double init = bias ? (*bias)[r] : 0.0;
        for (std::size_t j = 0; j < n; ++j) yr[j] = init;
        const double* wr = w.data() + r * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double wv = wr[kk];
            if (wv == 0.0) continue;
            const double* zr = z.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) yr[j] += wv * zr[j];
        }
    }
}

void matmul_backward(const Tensor& w, const Tensor& z, const Tensor& dy,
                     Tensor* dw, Tensor* db, Tensor* dz) {
    const std::size_t m = w.dim(0), k = w.dim(1), n = z.dim(1);
    if (dy.dim(0) != m || dy.dim(1) != n)
        throw std::invalid_argument("matmul_backward: dy dims disagree");
    if (dw) {
        for (std::size_t r = 0; r < m; ++r) {
            const double* dyr = dy.data() + r * n;
            double* dwr = dw->data() + r * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* zr = z.data() + kk * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += dyr[j] * zr[j];
                dwr[kk] += acc;
            }
        }
    }
    if (db) {
        for (std::size_t r = 0; r < m; ++r) {
            const double* dyr = dy.data() + r * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += dyr[j];
            (*db)[r] += acc;
        }
    }
    if (dz) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            double* dzr = dz->data() + kk * n;
            for (std::size_t r = 0; r < m; ++r) {
                const double wv = w[r * k + kk];
                if (wv == 0.0) continue;
                const double* dyr = dy.data() + r * n;
                for (std::size_t j = 0; j < n; ++j) dzr[j] += wv * dyr[j];
            }
        }
    }
}

ConvLayer::ConvLayer(std::size_t in, std::size_t out, std::size_t s)
    : in_ch(in), out_ch(out), stride(s), weight({out, in, 3, 3}), bias({out}) {
    if (s != 1 && s != 2) throw std::invalid_argument("ConvLayer: stride must be 1 or 2");
}

namespace {

void check_conv(const ConvLayer& layer, const Tensor& x) {
    if (x.rank() != 3 || x.dim(0) != layer.in_ch)
        throw std::invalid_argument("conv3x3: input " + x.shape_str() + " does not match in_ch " +
                                    std::to_string(layer.in_ch));
    if (layer.weight.rank() != 4 || layer.weight.dim(0) != layer.out_ch ||
        layer.weight.dim(1) != layer.in_ch || layer.weight.dim(2) != 3 || layer.weight.dim(3) != 3)
        throw std::invalid_argument("conv3x3: weight dims inconsistent");
    if (layer.stride != 1 && layer.stride != 2)
        throw std::invalid_argument("conv3x3: stride must be 1 or 2");
}

}  // namespace

Tensor conv3x3(const ConvLayer& layer, const Tensor& x) {
    check_conv(layer, x);
    const std::size_t cin = layer.in_ch, cout = layer.out_ch, s = layer.stride;
    const std::size_t h = x.dim(1), w = x.dim(2);
    const std::size_t ho = (h - 1) / s + 1, wo = (w - 1) / s + 1;
    Tensor y({cout, ho, wo});
    for (std::size_t o = 0; o < cout; ++o) {
        double* yp = y.data() + o * ho * wo;
        const double b = layer.bias[o];
        for (std::size_t i = 0; i < ho * wo; ++i) yp[i] = b;
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xp = x.data() + c * h * w;
            const double* wp = layer.weight.data() + (o * cin + c) * 9;
            for (std::size_t oi = 0; oi < ho; ++oi) {
                const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(oi * s) - 1;
                for (std::size_t oj = 0; oj < wo; ++oj) {
                    const std::ptrdiff_t jb = static_cast<std::ptrdiff_t>(oj * s) - 1;
                    double acc = 0.0;
                    for (int p = 0; p < 3; ++p) {
                        const std::ptrdiff_t ii = ib + p;
                        if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (int q = 0; q < 3; ++q) {
                            const std::ptrdiff_t jj = jb + q;
                            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += wp[p * 3 + q] * xp[ii * w + jj];
                        }
                    }
                    yp[oi * wo + oj] += acc;
                }
            }
        }
    }
    return y;
}

void conv3x3_backward(const ConvLayer& layer, const Tensor& x, const Tensor& dy,
                      Tensor* dx, Tensor* dw, Tensor* db) {
    check_conv(layer, x);
    const std::size_t cin = layer.in_ch, cout = layer.out_ch, s = layer.stride;
    const std::size_t h = x.dim(1), w = x.dim(2);
    const std::size_t ho = (h - 1) / s + 1, wo = (w - 1) / s + 1;
    if (dy.rank() != 3 || dy.dim(0) != cout || dy.dim(1) != ho || dy.dim(2) != wo)
        throw std::invalid_argument("conv3x3_backward: dy dims " + dy.shape_str() +
                                    " inconsistent with layer output");
    for (std::size_t o = 0; o < cout; ++o) {
        const double* dyp = dy.data() + o * ho * wo;
        if (db) {
            double acc = 0.0;
            for (std::size_t i = 0; i < ho * wo; ++i) acc += dyp[i];
            (*db)[o] += acc;
        }
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xp = x.data() + c * h * w;
            const double* wp = layer.weight.data() + (o * cin + c) * 9;
            double* dwp = dw ? dw->data() + (o * cin + c) * 9 : nullptr;
            double* dxp = dx ? dx->data() + c * h * w : nullptr;
            for (std::size_t oi = 0; oi < ho; ++oi) {
                const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(oi * s) - 1;
                for (std::size_t oj = 0; oj < wo; ++oj) {
                    const double g = dyp[oi * wo + oj];
                    if (g == 0.0) continue;
                    const std::ptrdiff_t jb = static_cast<std::ptrdiff_t>(oj * s) - 1;
                    for (int p = 0; p < 3; ++p) {
                        const std::ptrdiff_t ii = ib + p;
                        if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (int q = 0; q < 3; ++q) {
                            const std::ptrdiff_t jj = jb + q;
                            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                            if (dwp) dwp[p * 3 + q] += g * xp[ii * w + jj];
                            if (dxp) dxp[ii * w + jj] += g * wp[p * 3 + q];
                        }
                    }
                }
            }
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0.0) y[i] = 0.0;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    require_same_dims(y, dy, "relu_backward");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (y[i] <= 0.0) dx[i] = 0.0;
    return dx;
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("upsample_nearest2: rank-3 input required");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double v = x.at3(ch, i, j);
                y.at3(ch, 2 * i, 2 * j) = v;
                y.at3(ch, 2 * i, 2 * j + 1) = v;
                y.at3(ch, 2 * i + 1, 2 * j) = v;
                y.at3(ch, 2 * i + 1, 2 * j + 1) = v;
            }
    return y;
}

Tensor upsample_nearest2_backward(const Tensor& dy) {
    if (dy.rank() != 3 || dy.dim(1) % 2 != 0 || dy.dim(2) % 2 != 0)
        throw std::invalid_argument("upsample_nearest2_backward: even spatial dims required");
    const std::size_t c = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2;
    Tensor dx({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                dx.at3(ch, i, j) = dy.at3(ch, 2 * i, 2 * j) + dy.at3(ch, 2 * i, 2 * j + 1) +
                                   dy.at3(ch, 2 * i + 1, 2 * j) + dy.at3(ch, 2 * i + 1, 2 * j + 1);
    return dx;
}

Tensor avgpool2(const Tensor& x) {
    if (x.rank() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
        throw std::invalid_argument("avgpool2: even spatial dims required, got " + x.shape_str());
    const std::size_t c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
    Tensor y({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                y.at3(ch, i, j) = 0.25 * (x.at3(ch, 2 * i, 2 * j) + x.at3(ch, 2 * i, 2 * j + 1) +
                                          x.at3(ch, 2 * i + 1, 2 * j) +
                                          x.at3(ch, 2 * i + 1, 2 * j + 1));
    return y;
}

Tensor avgpool2_backward(const Tensor& dy) {
    if (dy.rank() != 3) throw std::invalid_argument("avgpool2_backward: rank-3 input required");
    const std::size_t c = dy.dim(0), h = dy.dim(1), w = dy.dim(2);
    Tensor dx({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double g = 0.25 * dy.at3(ch, i, j);
                dx.at3(ch, 2 * i, 2 * j) = g;
                dx.at3(ch, 2 * i, 2 * j + 1) = g;
                dx.at3(ch, 2 * i + 1, 2 * j) = g;
                dx.at3(ch, 2 * i + 1, 2 * j + 1) = g;
            }
    return dx;
}

void kaiming_uniform_fill(Tensor& weight, std::size_t fan_in, std::uint64_t seed) {
    if (fan_in == 0) throw std::invalid_argument("kaiming_uniform_fill: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Rng rng(seed);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.uniform(-bound, bound);
}

}  // namespace polarfuse
