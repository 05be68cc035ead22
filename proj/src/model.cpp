#include "polarfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "polarfuse/nn.hpp"
#include "polarfuse/rng.hpp"

namespace polarfuse {

namespace {

constexpr double kDepthClampMin = 1e-3;  // mm; keeps outputs strictly positive

Tensor reshaped(const Tensor& t, std::vector<std::size_t> dims) {
    return Tensor::from_data(std::move(dims),
                             std::vector<double>(t.data(), t.data() + t.size()));
}

ConvLayer conv_from(const ParamStore& params, const std::string& prefix, std::size_t in,
                    std::size_t out, std::size_t stride) {
    ConvLayer layer(in, out, stride);
    layer.weight = params.get(prefix + ".weight");
    layer.bias = params.get(prefix + ".bias");
    if (layer.weight.rank() != 4 || layer.weight.dim(0) != out || layer.weight.dim(1) != in)
        throw std::invalid_argument("model: parameter '" + prefix + ".weight' has dims " +
                                    layer.weight.shape_str() + ", expected [" +
                                    std::to_string(out) + "," + std::to_string(in) + ",3,3]");
    return layer;
}

PpfbParams ppfb_from(const ParamStore& params, std::size_t stage, std::size_t channels,
                     double dropout_p) {
    const std::string pre = "ppfb." + std::to_string(stage) + ".";
    PpfbParams block(channels);
    block.w_kqv.weight = params.get(pre + "w_kqv.weight");
    block.w_kqv.bias = params.get(pre + "w_kqv.bias");
    block.fc_attn.weight = params.get(pre + "fc_attn.weight");
    block.fc_attn.bias = params.get(pre + "fc_attn.bias");
    block.fc_d.weight = params.get(pre + "fc_d.weight");
    block.fc_d.bias = params.get(pre + "fc_d.bias");
    block.fc_stats.weight = params.get(pre + "fc_stats.weight");
    block.fc_stats.bias = params.get(pre + "fc_stats.bias");
    block.fc_out.weight = params.get(pre + "fc_out.weight");
    block.fc_out.bias = params.get(pre + "fc_out.bias");
    block.lambda = params.get(pre + "lambda")[0];
    block.dropout_p = dropout_p;
    block.check();
    return block;
}

void add_ppfb_grads(ParamStore& grads, std::size_t stage, const PpfbParams& g) {
    const std::string pre = "ppfb." + std::to_string(stage) + ".";
    auto axpy = [&grads](const std::string& name, const Tensor& src) {
        Tensor& dst = grads.get(name);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    axpy(pre + "w_kqv.weight", g.w_kqv.weight);
    axpy(pre + "w_kqv.bias", g.w_kqv.bias);
    axpy(pre + "fc_attn.weight", g.fc_attn.weight);
    axpy(pre + "fc_attn.bias", g.fc_attn.bias);
    axpy(pre + "fc_d.weight", g.fc_d.weight);
    axpy(pre + "fc_d.bias", g.fc_d.bias);
    axpy(pre + "fc_stats.weight", g.fc_stats.weight);
    axpy(pre + "fc_stats.bias", g.fc_stats.bias);
    axpy(pre + "fc_out.weight", g.fc_out.weight);
    axpy(pre + "fc_out.bias", g.fc_out.bias);
    grads.get(pre + "lambda")[0] += g.lambda;
}

// Depth raster normalized by d_max; invalid pixels become 0 (valid depth is
// strictly positive, so 0 is unambiguous).
Tensor normalized_depth(const DepthMap& sensor, double d_max) {
    const std::size_t h = sensor.height(), w = sensor.width();
    Tensor dn({1, h, w});
    for (std::size_t i = 0; i < h * w; ++i)
        dn[i] = sensor.valid[i] != 0.0 ? sensor.depth[i] / d_max : 0.0;
    return dn;
}

Tensor guidance_for_mode(const GuidanceTensor& guidance, Ablation mode) {
    Tensor g = guidance.data;
    if (mode == Ablation::RgbGuidance) {
        // substitute the aolp/dolp planes with intensity copies at the input
        const std::size_t plane = g.dim(1) * g.dim(2);
        std::memcpy(g.data() + plane, g.data(), plane * sizeof(double));
        std::memcpy(g.data() + 2 * plane, g.data(), plane * sizeof(double));
    }
    return g;
}

struct StageTrace {
    bool has_block = false;
    PpfbCache cache;
    Tensor m_star;   // block prompt output
    Tensor x_star;   // block feature output (feature node when has_block)
    Tensor enc_in;   // feature node value entering backbone conv
    Tensor enc_act;  // relu(conv(backbone_i, enc_in))
    bool has_resample = false;
    Tensor pooled;  // avgpool2(m_star), input of the prompt projection
};

struct DecTrace {
    Tensor up;   // upsampled conv input
    Tensor act;  // post-relu output
    bool has_skip = false;
    std::size_t skip_stage = 0;
};

struct ModelTrace {
    Tensor guidance_in;  // [6,H,W] after mode transform
    Tensor depth_in;     // [1,H,W]
    Tensor concat_in;    // [7,H,W]
    Tensor g_act, d_act, c_act;
    std::vector<StageTrace> stages;
    std::vector<DecTrace> dec;
    Tensor head_conv_out;  // [1,H,W] pre-scale conv output
    Tensor raw_mm;         // d_max * head_conv_out + head bias
    Tensor pred;           // clamped [H,W]
};

std::size_t decoder_in_ch(const ModelConfig& cfg, std::size_t j) {
    const std::size_t s = cfg.stages();
    if (j == 0) return cfg.widths[s - 1];
    return j <= s - 1 ? cfg.widths[s - 1 - j] : cfg.widths[0];
}

std::size_t decoder_out_ch(const ModelConfig& cfg, std::size_t j) {
    const std::size_t s = cfg.stages();
    return j + 2 <= s ? cfg.widths[s - 2 - j] : cfg.widths[0];
}

void forward_model(const GuidanceTensor& guidance, const DepthMap& sensor,
                   const ParamStore& params, const ModelConfig& cfg, bool training,
                   std::uint64_t seed, ModelTrace& tr) {
    cfg.validate();
    sensor.validate();
    if (guidance.data.rank() != 3 || guidance.data.dim(0) != cfg.guidance_channels)
        throw std::invalid_argument("model: guidance must be [" +
                                    std::to_string(cfg.guidance_channels) + ",H,W], got " +
                                    guidance.data.shape_str());
    const std::size_t h = guidance.height(), w = guidance.width();
    if (sensor.height() != h || sensor.width() != w)
        throw std::invalid_argument("model: sensor depth dims do not match guidance");
    const std::size_t s = cfg.stages();
    const std::size_t div = std::size_t(1) << s;
    if (h % div != 0 || w % div != 0)
        throw std::invalid_argument("model: H and W must be divisible by 2^stages (" +
                                    std::to_string(div) + ")");

    tr.guidance_in = guidance_for_mode(guidance, cfg.ablation);
    tr.depth_in = normalized_depth(sensor, cfg.d_max);
    tr.concat_in = Tensor({cfg.guidance_channels + 1, h, w});
    std::memcpy(tr.concat_in.data(), tr.guidance_in.data(),
                tr.guidance_in.size() * sizeof(double));
    std::memcpy(tr.concat_in.data() + tr.guidance_in.size(), tr.depth_in.data(),
                tr.depth_in.size() * sizeof(double));

    const std::size_t w0 = cfg.widths[0];
    tr.c_act = relu(conv3x3(conv_from(params, "enc.concat", cfg.guidance_channels + 1, w0, 2),
                            tr.concat_in));
    Tensor x0 = tr.c_act;
    Tensor m0;
    if (cfg.tri_encoder()) {
        tr.d_act = relu(conv3x3(conv_from(params, "enc.depth", 1, w0, 2), tr.depth_in));
        tr.g_act = relu(
            conv3x3(conv_from(params, "enc.guidance", cfg.guidance_channels, w0, 2),
                    tr.guidance_in));
        for (std::size_t i = 0; i < x0.size(); ++i) x0[i] += tr.d_act[i];
        m0 = tr.g_act;
    }

    tr.stages.assign(s, StageTrace{});
    Tensor feature = std::move(x0);
    Tensor prompt = std::move(m0);
    for (std::size_t i = 0; i < s; ++i) {
        StageTrace& st = tr.stages[i];
        st.has_block = cfg.block_at(i);
        if (st.has_block) {
            PpfbParams block = ppfb_from(params, i, cfg.widths[i], cfg.dropout_p);
            FusionState out = ppfb_forward(FusionState{prompt, feature}, block,
                                           mix_seed(seed, 0x90 + i), training, &st.cache);
            st.m_star = std::move(out.prompt);
            st.x_star = std::move(out.feature);
            st.enc_in = st.x_star;
        } else {
            st.enc_in = feature;
        }
        const std::size_t out_ch = i + 1 < s ? cfg.widths[i + 1] : cfg.widths[s - 1];
        const std::size_t stride = i + 1 < s ? 2 : 1;
        st.enc_act = relu(conv3x3(
            conv_from(params, "backbone." + std::to_string(i), cfg.widths[i], out_ch, stride),
            st.enc_in));
        feature = st.enc_act;

        st.has_resample = st.has_block && i + 1 < s && cfg.block_at(i + 1);
        if (st.has_resample) {
            st.pooled = avgpool2(st.m_star);
            const std::size_t c_in = cfg.widths[i], c_out = cfg.widths[i + 1];
            const std::string pre = "prompt." + std::to_string(i) + ".proj";
            const Tensor& pw = params.get(pre + ".weight");
            const Tensor& pb = params.get(pre + ".bias");
            if (pw.rank() != 2 || pw.dim(0) != c_out || pw.dim(1) != c_in)
                throw std::invalid_argument("model: '" + pre + ".weight' dims mismatch");
            Tensor pooled_mat =
                reshaped(st.pooled, {c_in, st.pooled.dim(1) * st.pooled.dim(2)});
            Tensor next;
            matmul(next, pw, pooled_mat, &pb);
            prompt = reshaped(next, {c_out, st.pooled.dim(1), st.pooled.dim(2)});
        }
    }

    // decoder: nearest-neighbor upsample + conv, additive skips from the
    // fused per-stage features
    Tensor u = tr.stages[s - 1].enc_act;
    tr.dec.assign(s, DecTrace{});
    for (std::size_t j = 0; j < s; ++j) {
        DecTrace& d = tr.dec[j];
        d.up = upsample_nearest2(u);
        Tensor pre = conv3x3(conv_from(params, "decoder.up" + std::to_string(j),
                                       decoder_in_ch(cfg, j), decoder_out_ch(cfg, j), 1),
                             d.up);
        if (j + 2 <= s) {
            d.has_skip = true;
            d.skip_stage = s - 2 - j;
            const Tensor& skip = tr.stages[d.skip_stage].enc_in;
            require_same_dims(pre, skip, "model: decoder skip");
            for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += skip[i];
        }
        d.act = relu(pre);
        u = d.act;
    }

    ConvLayer head(cfg.widths[0], 1, 1);
    head.weight = params.get("decoder.head.weight");
    tr.head_conv_out = conv3x3(head, tr.dec[s - 1].act);
    const double head_bias = params.get("decoder.head.bias")[0];
    tr.raw_mm = tr.head_conv_out;
    for (std::size_t i = 0; i < tr.raw_mm.size(); ++i)
        tr.raw_mm[i] = cfg.d_max * tr.raw_mm[i] + head_bias;

    tr.pred = Tensor({h, w});
    for (std::size_t i = 0; i < h * w; ++i)
        tr.pred[i] = std::clamp(tr.raw_mm[i], kDepthClampMin, cfg.d_max);
}

// Reverse pass mirroring forward_model; accumulates parameter gradients into
// `grads` (zeros_like of params) given dL/dpred.
void backward_model(const ParamStore& params, const ModelConfig& cfg, const ModelTrace& tr,
                    const Tensor& dpred, ParamStore& grads) {
    const std::size_t s = cfg.stages();
    const std::size_t h = tr.pred.dim(0), w = tr.pred.dim(1);

    // clamp + affine head
    Tensor draw({1, h, w});
    double dhead_bias = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) {
        const double inside =
            (tr.raw_mm[i] > kDepthClampMin && tr.raw_mm[i] < cfg.d_max) ? 1.0 : 0.0;
        const double g = dpred[i] * inside;
        dhead_bias += g;
        draw[i] = g * cfg.d_max;
    }
    grads.get("decoder.head.bias")[0] += dhead_bias;

    ConvLayer head(cfg.widths[0], 1, 1);
    head.weight = params.get("decoder.head.weight");
    Tensor dhead_in(tr.dec[s - 1].act.dims());
    conv3x3_backward(head, tr.dec[s - 1].act, draw, &dhead_in,
                     &grads.get("decoder.head.weight"), nullptr);

    // decoder steps in reverse; skip grads land on the stage feature nodes
    std::vector<Tensor> dskip(s);
    Tensor dact = std::move(dhead_in);
    Tensor d_bottleneck;
    for (std::size_t jj = s; jj-- > 0;) {
        const DecTrace& d = tr.dec[jj];
        Tensor dsum = relu_backward(d.act, dact);
        if (d.has_skip) dskip[d.skip_stage] = dsum;  // same tensor feeds the skip add
        ConvLayer layer = conv_from(params, "decoder.up" + std::to_string(jj),
                                    decoder_in_ch(cfg, jj), decoder_out_ch(cfg, jj), 1);
        Tensor dup(d.up.dims());
        conv3x3_backward(layer, d.up, dsum, &dup,
                         &grads.get("decoder.up" + std::to_string(jj) + ".weight"),
                         &grads.get("decoder.up" + std::to_string(jj) + ".bias"));
        Tensor dprev = upsample_nearest2_backward(dup);
        if (jj == 0)
            d_bottleneck = std::move(dprev);
        else
            dact = std::move(dprev);
    }

    // stage loop in reverse
    Tensor dX_next = std::move(d_bottleneck);  // grad at stages[s-1].enc_act
    Tensor dM_next;                            // grad at the prompt entering stage i+1
    Tensor dX0, dM0;
    for (std::size_t ii = s; ii-- > 0;) {
        const StageTrace& st = tr.stages[ii];
        Tensor dpre = relu_backward(st.enc_act, dX_next);
        const std::size_t out_ch = ii + 1 < s ? cfg.widths[ii + 1] : cfg.widths[s - 1];
        const std::size_t stride = ii + 1 < s ? 2 : 1;
        ConvLayer layer = conv_from(params, "backbone." + std::to_string(ii), cfg.widths[ii],
                                    out_ch, stride);
        Tensor dF(st.enc_in.dims());
        conv3x3_backward(layer, st.enc_in, dpre, &dF,
                         &grads.get("backbone." + std::to_string(ii) + ".weight"),
                         &grads.get("backbone." + std::to_string(ii) + ".bias"));
        if (!dskip[ii].empty())
            for (std::size_t i = 0; i < dF.size(); ++i) dF[i] += dskip[ii][i];

        Tensor dm_star;
        if (st.has_resample) {
            const std::size_t c_in = cfg.widths[ii], c_out = cfg.widths[ii + 1];
            const std::string pre = "prompt." + std::to_string(ii) + ".proj";
            const Tensor& pw = params.get(pre + ".weight");
            const std::size_t tp = st.pooled.dim(1) * st.pooled.dim(2);
            Tensor dnext = reshaped(dM_next, {c_out, tp});
            Tensor pooled_mat = reshaped(st.pooled, {c_in, tp});
            Tensor dpooled({c_in, tp});
            matmul_backward(pw, pooled_mat, dnext, &grads.get(pre + ".weight"),
                            &grads.get(pre + ".bias"), &dpooled);
            dm_star = avgpool2_backward(
                reshaped(dpooled, {c_in, st.pooled.dim(1), st.pooled.dim(2)}));
        }

        if (st.has_block) {
            if (dm_star.empty()) dm_star = Tensor(st.m_star.dims(), 0.0);
            PpfbParams block = ppfb_from(params, ii, cfg.widths[ii], cfg.dropout_p);
            PpfbGrads bg = ppfb_backward(block, st.cache, dm_star, dF);
            add_ppfb_grads(grads, ii, bg.param);
            dX_next = std::move(bg.d_feature);
            dM_next = std::move(bg.d_prompt);
        } else {
            dX_next = std::move(dF);
            dM_next = Tensor();
        }
        if (ii == 0) {
            dX0 = std::move(dX_next);
            dM0 = std::move(dM_next);
        }
    }

    // initial encoders
    auto encoder_backward = [&](const std::string& name, const Tensor& input,
                                const Tensor& act, const Tensor& dact_enc,
                                std::size_t in_ch) {
        Tensor dpre = relu_backward(act, dact_enc);
        ConvLayer layer = conv_from(params, name, in_ch, cfg.widths[0], 2);
        conv3x3_backward(layer, input, dpre, nullptr, &grads.get(name + ".weight"),
                         &grads.get(name + ".bias"));
    };
    encoder_backward("enc.concat", tr.concat_in, tr.c_act, dX0, cfg.guidance_channels + 1);
    if (cfg.tri_encoder()) {
        encoder_backward("enc.depth", tr.depth_in, tr.d_act, dX0, 1);
        if (!dM0.empty())
            encoder_backward("enc.guidance", tr.guidance_in, tr.g_act, dM0,
                             cfg.guidance_channels);
    }
}

Tensor loss_grad(const DepthMap& pred, const DepthMap& gt) {
    const std::size_t n = gt.valid_count();
    Tensor g(pred.depth.dims(), 0.0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (gt.valid[i] == 0.0) continue;
        const double e = pred.depth[i] - gt.depth[i];
        const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
        g[i] = (sgn + 2.0 * e) * inv;
    }
    return g;
}

}  // namespace

Ablation ablation_from_string(const std::string& s) {
    if (s == "ppft") return Ablation::Ppft;
    if (s == "no-ppft") return Ablation::NoPpft;
    if (s == "rgb-guidance") return Ablation::RgbGuidance;
    if (s == "early-fusion") return Ablation::EarlyFusion;
    if (s == "shallow-ppfb") return Ablation::ShallowPpfb;
    throw std::invalid_argument("unknown ablation mode '" + s + "'");
}

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Ppft: return "ppft";
        case Ablation::NoPpft: return "no-ppft";
        case Ablation::RgbGuidance: return "rgb-guidance";
        case Ablation::EarlyFusion: return "early-fusion";
        case Ablation::ShallowPpfb: return "shallow-ppfb";
    }
    return "?";
}

bool ModelConfig::tri_encoder() const {
    return ablation == Ablation::Ppft || ablation == Ablation::RgbGuidance ||
           ablation == Ablation::ShallowPpfb;
}

bool ModelConfig::block_at(std::size_t stage) const {
    switch (ablation) {
        case Ablation::Ppft:
        case Ablation::RgbGuidance: return true;
        case Ablation::ShallowPpfb: return stage == 0;
        case Ablation::NoPpft:
        case Ablation::EarlyFusion: return false;
    }
    return false;
}

void ModelConfig::validate() const {
    if (widths.empty()) throw std::invalid_argument("ModelConfig: need at least one stage");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        if (widths[i] >= widths[i + 1])
            throw std::invalid_argument("ModelConfig: widths must be strictly increasing");
    if (widths[0] == 0) throw std::invalid_argument("ModelConfig: zero width");
    if (guidance_channels != 6)
        throw std::invalid_argument("ModelConfig: guidance channel count is fixed at 6");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw std::invalid_argument("ModelConfig: dropout_p must be in [0, 1)");
    if (!(lambda_init > 0.0)) throw std::invalid_argument("ModelConfig: lambda_init must be > 0");
    if (!(d_max > 0.0)) throw std::invalid_argument("ModelConfig: d_max must be > 0");
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore params;
    auto add_conv = [&](const std::string& name, std::size_t in, std::size_t out) {
        Tensor weight({out, in, 3, 3});
        kaiming_uniform_fill(weight, in * 9, mix_seed(seed, fnv1a64(name.c_str())));
        params.add(name + ".weight", std::move(weight));
        params.add(name + ".bias", Tensor({out}, 0.0));
    };
    auto add_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
        Tensor weight({out, in});
        kaiming_uniform_fill(weight, in, mix_seed(seed, fnv1a64(name.c_str())));
        params.add(name + ".weight", std::move(weight));
        params.add(name + ".bias", Tensor({out}, 0.0));
    };

    const std::size_t s = cfg.stages();
    const std::size_t w0 = cfg.widths[0];
    add_conv("enc.concat", cfg.guidance_channels + 1, w0);
    if (cfg.tri_encoder()) {
        add_conv("enc.depth", 1, w0);
        add_conv("enc.guidance", cfg.guidance_channels, w0);
    }
    for (std::size_t i = 0; i < s; ++i) {
        add_conv("backbone." + std::to_string(i), cfg.widths[i],
                 i + 1 < s ? cfg.widths[i + 1] : cfg.widths[s - 1]);
        if (cfg.block_at(i)) {
            const std::string pre = "ppfb." + std::to_string(i) + ".";
            const std::size_t c = cfg.widths[i];
            add_linear(pre + "w_kqv", 2 * c, 3 * c);
            add_linear(pre + "fc_attn", 2 * c, c);
            add_linear(pre + "fc_d", c, 2 * c);
            add_linear(pre + "fc_stats", c, 2 * c);
            add_linear(pre + "fc_out", c, c);
            params.add(pre + "lambda", Tensor({1}, cfg.lambda_init));
        }
        if (cfg.block_at(i) && i + 1 < s && cfg.block_at(i + 1))
            add_linear("prompt." + std::to_string(i) + ".proj", cfg.widths[i], cfg.widths[i + 1]);
    }
    for (std::size_t j = 0; j < s; ++j)
        add_conv("decoder.up" + std::to_string(j), decoder_in_ch(cfg, j),
                 decoder_out_ch(cfg, j));
    add_conv("decoder.head", w0, 1);
    // The head starts as a flat prior: zero weights, bias at a plausible
    // indoor depth. A random head saturates the output clamp and stalls the
    // first training steps.
    params.get("decoder.head.weight").fill(0.0);
    params.get("decoder.head.bias")[0] = 0.15 * cfg.d_max;
    apply_freeze(params, cfg.freeze_prefixes);
    return params;
}

void apply_freeze(ParamStore& params, const std::vector<std::string>& prefixes) {
    for (const std::string& p : prefixes) params.freeze_prefix(p);
}

DepthMap enhance(const GuidanceTensor& guidance, const DepthMap& sensor,
                 const ParamStore& params, const ModelConfig& config) {
    ModelTrace tr;
    forward_model(guidance, sensor, params, config, /*training=*/false, 0, tr);
    return DepthMap::all_valid(std::move(tr.pred));
}

double loss(const DepthMap& pred, const DepthMap& gt) {
    require_same_dims(pred.depth, gt.depth, "loss");
    const std::size_t n = gt.valid_count();
    if (n == 0) throw std::invalid_argument("loss: empty valid mask in ground truth");
    double acc = 0.0;
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        if (gt.valid[i] == 0.0) continue;
        const double e = pred.depth[i] - gt.depth[i];
        acc += std::abs(e) + e * e;
    }
    return acc / static_cast<double>(n);
}

LoadReport load_pretrained(ParamStore& params, const ParamStore& archive,
                           const std::vector<std::string>& freeze_prefixes) {
    LoadReport report;
    for (auto& [name, entry] : params) {
        if (starts_with(name, "ppfb.")) continue;  // fusion blocks always start fresh
        if (!archive.contains(name)) {
            report.skipped_missing.push_back(name);
            continue;
        }
        const Tensor& src = archive.get(name);
        if (!src.same_dims(entry.value)) {
            report.skipped_shape_mismatch.push_back(name);
            continue;
        }
        entry.value = src;
        report.loaded.push_back(name);
    }
    for (const std::string& prefix : freeze_prefixes) {
        auto hit = params.freeze_prefix(prefix);
        report.frozen.insert(report.frozen.end(), hit.begin(), hit.end());
    }
    return report;
}

StepResult train_step(ParamStore& params, const GuidanceTensor& guidance, const DepthMap& sensor,
                      const DepthMap& gt, const ModelConfig& config, const SgdOptions& opt,
                      std::uint64_t seed) {
    ModelTrace tr;
    forward_model(guidance, sensor, params, config, /*training=*/true, seed, tr);
    DepthMap pred = DepthMap::all_valid(tr.pred);
    const double loss_value = loss(pred, gt);
    if (!std::isfinite(loss_value))
        throw std::runtime_error("train_step: non-finite loss, step aborted");

    double sum_sq = 0.0, sum_abs = 0.0;
    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        if (gt.valid[i] == 0.0) continue;
        const double e = pred.depth[i] - gt.depth[i];
        sum_sq += e * e;
        sum_abs += std::abs(e);
        ++n_valid;
    }

    ParamStore grads = params.zeros_like();
    backward_model(params, config, tr, loss_grad(pred, gt), grads);

    double scale = 1.0;
    if (opt.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, e] : grads) {
            if (!params.trainable(name)) continue;
            for (std::size_t i = 0; i < e.value.size(); ++i) sq += e.value[i] * e.value[i];
        }
        const double norm = std::sqrt(sq);
        if (norm > opt.clip_norm) scale = opt.clip_norm / norm;
    }

    for (auto& [name, e] : params) {
        if (!e.trainable) continue;
        const Tensor& g = grads.get(name);
        for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] -= opt.lr * scale * g[i];
        if (starts_with(name, "ppfb.") && name.size() > 6 &&
            name.compare(name.size() - 6, 6, "lambda") == 0 && e.value[0] < 1e-6)
            e.value[0] = 1e-6;  // lambda stays positive
    }
    const double n = static_cast<double>(n_valid);
    return StepResult{loss_value, std::sqrt(sum_sq / n), sum_abs / n};
}

}  // namespace polarfuse
