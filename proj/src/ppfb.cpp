#include "polarfuse/ppfb.hpp"

#include <cstring>
#include <stdexcept>

#include "polarfuse/rng.hpp"

namespace polarfuse {

namespace {

void check_finite(const Tensor& t, const char* stage) {
    if (!t.all_finite())
        throw std::runtime_error(std::string("ppfb_forward: non-finite intermediate in ") + stage);
}

// rows [r0, r0+n) of src copied into dst starting at row d0; both [*, T]
void copy_rows(Tensor& dst, std::size_t d0, const Tensor& src, std::size_t r0, std::size_t n,
               std::size_t t) {
    std::memcpy(dst.data() + d0 * t, src.data() + r0 * t, n * t * sizeof(double));
}

}  // namespace

PpfbParams::PpfbParams(std::size_t c)
    : w_kqv(2 * c, 3 * c),
      fc_attn(2 * c, c),
      fc_d(c, 2 * c),
      fc_stats(c, 2 * c),
      fc_out(c, c) {}

void PpfbParams::check() const {
    const std::size_t c = fc_out.out_features;
    if (c == 0) throw std::invalid_argument("PpfbParams: zero channel count");
    w_kqv.check_consistent();
    fc_attn.check_consistent();
    fc_d.check_consistent();
    fc_stats.check_consistent();
    fc_out.check_consistent();
    if (w_kqv.in_features != 2 * c || w_kqv.out_features != 3 * c ||
        fc_attn.in_features != 2 * c || fc_attn.out_features != c || fc_d.in_features != c ||
        fc_d.out_features != 2 * c || fc_stats.in_features != c ||
        fc_stats.out_features != 2 * c || fc_out.in_features != c)
        throw std::invalid_argument("PpfbParams: layer dims inconsistent with channel count");
    if (!(lambda > 0.0)) throw std::invalid_argument("PpfbParams: lambda must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw std::invalid_argument("PpfbParams: dropout_p must be in [0, 1)");
}

FusionState ppfb_forward(const FusionState& state, const PpfbParams& params,
                         std::uint64_t dropout_seed, bool training, PpfbCache* cache) {
    params.check();
    require_same_dims(state.prompt, state.feature, "ppfb_forward");
    if (state.prompt.rank() != 3)
        throw std::invalid_argument("ppfb_forward: state tensors must be [C,H,W]");
    const std::size_t c = state.prompt.dim(0);
    if (c != params.channels())
        throw std::invalid_argument("ppfb_forward: state channels " + std::to_string(c) +
                                    " != block channels " + std::to_string(params.channels()));
    const std::size_t h = state.prompt.dim(1), w = state.prompt.dim(2);
    const std::size_t t = h * w;

    // stage 1: attention-like feature update, tokens are spatial positions
    Tensor z({2 * c, t});
    copy_rows(z, 0, state.prompt, 0, c, t);
    copy_rows(z, c, state.feature, 0, c, t);

    Tensor kqv;
    matmul(kqv, params.w_kqv.weight, z, &params.w_kqv.bias);

    Tensor qk({2 * c, t});
    copy_rows(qk, 0, kqv, c, c, t);  // q
    copy_rows(qk, c, kqv, 0, c, t);  // k

    Tensor logits;
    matmul(logits, params.fc_attn.weight, qk, &params.fc_attn.bias);
    Tensor smax = softmax(logits, 0);

    Tensor fused({c, t});
    {
        const double* vrow = kqv.data() + 2 * c * t;
        for (std::size_t i = 0; i < c * t; ++i) fused[i] = params.lambda * smax[i] * vrow[i];
    }

    Tensor pre_drop;
    matmul(pre_drop, params.fc_d.weight, fused, &params.fc_d.bias);

    const bool apply_mask = training && params.dropout_p > 0.0;
    Tensor mask;
    if (apply_mask) {
        mask = dropout_mask(pre_drop.dims(), params.dropout_p, dropout_seed);
        for (std::size_t i = 0; i < pre_drop.size(); ++i) pre_drop[i] *= mask[i];
    }
    check_finite(pre_drop, "stage1");

    Tensor feature_out({c, h, w});
    copy_rows(feature_out, 0, pre_drop, 0, c, t);  // X*
    Tensor mx({c, t});
    copy_rows(mx, 0, pre_drop, c, c, t);  // M^x

    // stage 2: channel fovea prompt update; k^m,q^m,v^m = X, M, k
    Tensor wbar({c});
    {
        const double inv = 1.0 / static_cast<double>(t);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* mrow = z.data() + ch * t;
            const double* xrow = z.data() + (c + ch) * t;
            double acc = 0.0;
            for (std::size_t i = 0; i < t; ++i) acc += mrow[i] + xrow[i];
            wbar[ch] = acc * inv;
        }
    }
    Tensor wbar_col = Tensor::from_data({c, 1}, std::vector<double>(wbar.data(), wbar.data() + c));
    Tensor svec_col;
    matmul(svec_col, params.fc_stats.weight, wbar_col, &params.fc_stats.bias);
    Tensor svec = Tensor::from_data(
        {2 * c}, std::vector<double>(svec_col.data(), svec_col.data() + 2 * c));

    Tensor combined({c, t});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double sq = svec[ch], sk = svec[c + ch];
        const double* mrow = z.data() + ch * t;
        const double* xrow = z.data() + (c + ch) * t;
        const double* krow = kqv.data() + ch * t;
        double* out = combined.data() + ch * t;
        for (std::size_t i = 0; i < t; ++i) out[i] = (sq * mrow[i] + sk * xrow[i]) * krow[i];
    }

    Tensor fovea;
    matmul(fovea, params.fc_out.weight, combined, &params.fc_out.bias);

    Tensor prompt_out({c, h, w});
    for (std::size_t i = 0; i < c * t; ++i) prompt_out[i] = mx[i] + fovea[i];
    check_finite(prompt_out, "stage2");

    if (cache) {
        cache->valid = true;
        cache->training = apply_mask;
        cache->C = c;
        cache->H = h;
        cache->W = w;
        cache->T = t;
        cache->lambda = params.lambda;
        cache->z = std::move(z);
        cache->kqv = std::move(kqv);
        cache->smax = std::move(smax);
        cache->fused = std::move(fused);
        cache->mask = std::move(mask);
        cache->wbar = std::move(wbar);
        cache->svec = std::move(svec);
        cache->combined = std::move(combined);
    }
    return FusionState{std::move(prompt_out), std::move(feature_out)};
}

PpfbGrads ppfb_backward(const PpfbParams& params, const PpfbCache& cache,
                        const Tensor& d_prompt_out, const Tensor& d_feature_out) {
    if (!cache.valid) throw std::logic_error("ppfb_backward: missing forward cache");
    params.check();
    const std::size_t c = cache.C, t = cache.T;
    if (d_prompt_out.size() != c * t || d_feature_out.size() != c * t)
        throw std::invalid_argument("ppfb_backward: upstream grad dims mismatch");

    PpfbGrads out;
    out.param = PpfbParams(c);
    out.param.lambda = 0.0;
    out.param.dropout_p = params.dropout_p;

    // flat [C,T] views of the upstream grads
    const double* dM_star = d_prompt_out.data();
    const double* dX_star = d_feature_out.data();

    // stage 2 backward: M* = Mx + fc_out(combined)
    Tensor do_fovea =
        Tensor::from_data({c, t}, std::vector<double>(dM_star, dM_star + c * t));
    Tensor dcombined({c, t});
    matmul_backward(params.fc_out.weight, cache.combined, do_fovea, &out.param.fc_out.weight,
                    &out.param.fc_out.bias, &dcombined);

    Tensor dsvec({2 * c});
    Tensor dM2({c, t});  // stage-2 contribution to dM
    Tensor dX2({c, t});
    {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double sq = cache.svec[ch], sk = cache.svec[c + ch];
            const double* mrow = cache.z.data() + ch * t;
            const double* xrow = cache.z.data() + (c + ch) * t;
            const double* krow = cache.kqv.data() + ch * t;
            const double* dc = dcombined.data() + ch * t;
            double* dm = dM2.data() + ch * t;
            double* dx = dX2.data() + ch * t;
            double acc_q = 0.0, acc_k = 0.0;
            for (std::size_t i = 0; i < t; ++i) {
                const double dweighted = dc[i] * krow[i];
                acc_q += dweighted * mrow[i];
                acc_k += dweighted * xrow[i];
                dm[i] = dweighted * sq;
                dx[i] = dweighted * sk;
            }
            dsvec[ch] = acc_q;
            dsvec[c + ch] = acc_k;
        }
    }

    // fc_stats over the pooled token mean
    Tensor dsvec_col = Tensor::from_data(
        {2 * c, 1}, std::vector<double>(dsvec.data(), dsvec.data() + 2 * c));
    Tensor wbar_col = Tensor::from_data(
        {c, 1}, std::vector<double>(cache.wbar.data(), cache.wbar.data() + c));
    Tensor dwbar_col({c, 1});
    matmul_backward(params.fc_stats.weight, wbar_col, dsvec_col, &out.param.fc_stats.weight,
                    &out.param.fc_stats.bias, &dwbar_col);
    {
        const double inv = 1.0 / static_cast<double>(t);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = dwbar_col[ch] * inv;
            double* dm = dM2.data() + ch * t;
            double* dx = dX2.data() + ch * t;
            for (std::size_t i = 0; i < t; ++i) {
                dm[i] += g;
                dx[i] += g;
            }
        }
    }

    // dk from stage 2: combined = weighted (*) k
    Tensor dk2({c, t});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double sq = cache.svec[ch], sk = cache.svec[c + ch];
        const double* mrow = cache.z.data() + ch * t;
        const double* xrow = cache.z.data() + (c + ch) * t;
        const double* dc = dcombined.data() + ch * t;
        double* dk = dk2.data() + ch * t;
        for (std::size_t i = 0; i < t; ++i) dk[i] = dc[i] * (sq * mrow[i] + sk * xrow[i]);
    }

    // stage 1 backward: [X*; Mx] = mask (*) fc_d(fused)
    Tensor dgd({2 * c, t});
    std::memcpy(dgd.data(), dX_star, c * t * sizeof(double));
    std::memcpy(dgd.data() + c * t, dM_star, c * t * sizeof(double));
    if (cache.training)
        for (std::size_t i = 0; i < dgd.size(); ++i) dgd[i] *= cache.mask[i];

    Tensor dfused({c, t});
    matmul_backward(params.fc_d.weight, cache.fused, dgd, &out.param.fc_d.weight,
                    &out.param.fc_d.bias, &dfused);

    // fused = lambda * smax (*) v
    Tensor dsmax({c, t});
    Tensor dv({c, t});
    double dlambda = 0.0;
    {
        const double* vrow = cache.kqv.data() + 2 * c * t;
        for (std::size_t i = 0; i < c * t; ++i) {
            const double da = dfused[i] * vrow[i];  // d/d(lambda*smax)
            dlambda += da * cache.smax[i];
            dsmax[i] = cache.lambda * da;
            dv[i] = dfused[i] * cache.lambda * cache.smax[i];
        }
    }
    out.param.lambda = dlambda;

    // softmax backward per token column
    Tensor dlogits({c, t});
    for (std::size_t col = 0; col < t; ++col) {
        double dot = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch)
            dot += dsmax[ch * t + col] * cache.smax[ch * t + col];
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = ch * t + col;
            dlogits[i] = cache.smax[i] * (dsmax[i] - dot);
        }
    }

    Tensor qk({2 * c, t});
    copy_rows(qk, 0, cache.kqv, c, c, t);
    copy_rows(qk, c, cache.kqv, 0, c, t);
    Tensor dqk({2 * c, t});
    matmul_backward(params.fc_attn.weight, qk, dlogits, &out.param.fc_attn.weight,
                    &out.param.fc_attn.bias, &dqk);

    // assemble dkqv = [dk; dq; dv]
    Tensor dkqv({3 * c, t});
    {
        double* dk_rows = dkqv.data();
        double* dq_rows = dkqv.data() + c * t;
        double* dv_rows = dkqv.data() + 2 * c * t;
        const double* dq_src = dqk.data();          // first C rows of [q;k]
        const double* dk_src = dqk.data() + c * t;  // second C rows
        for (std::size_t i = 0; i < c * t; ++i) {
            dk_rows[i] = dk_src[i] + dk2[i];
            dq_rows[i] = dq_src[i];
            dv_rows[i] = dv[i];
        }
    }

    Tensor dz({2 * c, t});
    matmul_backward(params.w_kqv.weight, cache.z, dkqv, &out.param.w_kqv.weight,
                    &out.param.w_kqv.bias, &dz);

    out.d_prompt = Tensor({c, cache.H, cache.W});
    out.d_feature = Tensor({c, cache.H, cache.W});
    for (std::size_t i = 0; i < c * t; ++i) {
        out.d_prompt[i] = dz[i] + dM2[i];
        out.d_feature[i] = dz[c * t + i] + dX2[i];
    }
    return out;
}

ChainResult chain_forward(const FusionState& initial, const std::vector<PpfbParams>& blocks,
                          const std::vector<StageTransform>& encoders,
                          const std::vector<StageTransform>& prompt_resamplers,
                          std::uint64_t dropout_seed, bool training) {
    if (blocks.empty()) throw std::invalid_argument("chain_forward: no blocks");
    if (encoders.size() != blocks.size())
        throw std::invalid_argument("chain_forward: encoders count != blocks count");
    if (!prompt_resamplers.empty() && prompt_resamplers.size() != blocks.size() - 1)
        throw std::invalid_argument("chain_forward: need blocks-1 prompt resamplers (or none)");

    ChainResult result;
    FusionState state = initial;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        FusionState updated =
            ppfb_forward(state, blocks[i], mix_seed(dropout_seed, i), training);
        result.stage_outputs.push_back(updated);
        Tensor next_feature = encoders[i](updated.feature);
        if (i + 1 < blocks.size()) {
            Tensor next_prompt = prompt_resamplers.empty()
                                     ? updated.prompt
                                     : prompt_resamplers[i](updated.prompt);
            if (!next_prompt.same_dims(next_feature))
                throw std::invalid_argument(
                    "chain_forward: stage " + std::to_string(i + 1) +
                    " dim contract violation: prompt " + next_prompt.shape_str() +
                    " vs feature " + next_feature.shape_str());
            state = FusionState{std::move(next_prompt), std::move(next_feature)};
        } else {
            result.final_feature = std::move(next_feature);
        }
    }
    return result;
}

PpfbParams init_ppfb(std::size_t channels, double lambda_init, double dropout_p,
                     std::uint64_t seed) {
    PpfbParams p(channels);
    p.lambda = lambda_init;
    p.dropout_p = dropout_p;
    kaiming_uniform_fill(p.w_kqv.weight, p.w_kqv.in_features, mix_seed(seed, 1));
    kaiming_uniform_fill(p.fc_attn.weight, p.fc_attn.in_features, mix_seed(seed, 2));
    kaiming_uniform_fill(p.fc_d.weight, p.fc_d.in_features, mix_seed(seed, 3));
    kaiming_uniform_fill(p.fc_stats.weight, p.fc_stats.in_features, mix_seed(seed, 4));
    kaiming_uniform_fill(p.fc_out.weight, p.fc_out.in_features, mix_seed(seed, 5));
    p.check();
    return p;
}

}  // namespace polarfuse
