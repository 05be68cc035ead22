#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "polarfuse/gradcheck.hpp"
#include "polarfuse/metrics.hpp"
#include "polarfuse/model.hpp"
#include "polarfuse/rng.hpp"
#include "polarfuse/simulate.hpp"

using namespace polarfuse;

namespace {

GuidanceTensor random_guidance(std::size_t h, std::size_t w, std::uint64_t seed) {
    GuidanceTensor g{Tensor({6, h, w})};
    Rng rng(seed);
    for (std::size_t p = 0; p < h * w; ++p) {
        g.data[p] = rng.uniform(0.0, 1.0);              // intensity
        g.data[h * w + p] = rng.uniform(0.0, kPi);      // aolp
        g.data[2 * h * w + p] = rng.uniform(0.0, 1.0);  // dolp
        const double x = rng.uniform(-0.4, 0.4), y = rng.uniform(-0.4, 0.4);
        const double inv = 1.0 / std::sqrt(x * x + y * y + 1.0);
        g.data[3 * h * w + p] = x * inv;
        g.data[4 * h * w + p] = y * inv;
        g.data[5 * h * w + p] = inv;
    }
    return g;
}

DepthMap random_depth(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 900.0,
                      double hi = 2600.0) {
    DepthMap d{Tensor({h, w}), Tensor({h, w}, 1.0)};
    Rng rng(seed);
    for (std::size_t p = 0; p < h * w; ++p) d.depth[p] = rng.uniform(lo, hi);
    return d;
}

ModelConfig tiny_config(Ablation mode = Ablation::Ppft) {
    ModelConfig cfg;
    cfg.widths = {4, 8};
    cfg.ablation = mode;
    cfg.dropout_p = 0.0;
    return cfg;
}

bool stores_equal(const ParamStore& a, const ParamStore& b) {
    if (a.names() != b.names()) return false;
    for (const auto& [name, e] : a) {
        const Tensor& other = b.get(name);
        if (!other.same_dims(e.value)) return false;
        for (std::size_t i = 0; i < e.value.size(); ++i)
            if (e.value[i] != other[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg;
    cfg.widths = {8, 8};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.widths = {};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.widths = {8, 16};
    cfg.dropout_p = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(ablation_from_string("rgb-guidance") == Ablation::RgbGuidance);
    CHECK_THROWS_AS(ablation_from_string("nope"), std::invalid_argument);
}

TEST_CASE("init_params creates the expected name set per mode") {
    ModelConfig ppft = tiny_config(Ablation::Ppft);
    ParamStore p = init_params(ppft, 1);
    CHECK(p.contains("enc.concat.weight"));
    CHECK(p.contains("enc.depth.weight"));
    CHECK(p.contains("enc.guidance.weight"));
    CHECK(p.contains("ppfb.0.w_kqv.weight"));
    CHECK(p.contains("ppfb.1.lambda"));
    CHECK(p.contains("prompt.0.proj.weight"));
    CHECK(p.contains("backbone.0.weight"));
    CHECK(p.contains("decoder.up1.weight"));
    CHECK(p.contains("decoder.head.bias"));

    ParamStore n = init_params(tiny_config(Ablation::NoPpft), 1);
    CHECK(n.contains("enc.concat.weight"));
    CHECK_FALSE(n.contains("enc.guidance.weight"));
    CHECK_FALSE(n.contains("ppfb.0.w_kqv.weight"));
    CHECK_FALSE(n.contains("prompt.0.proj.weight"));

    ParamStore s = init_params(tiny_config(Ablation::ShallowPpfb), 1);
    CHECK(s.contains("ppfb.0.w_kqv.weight"));
    CHECK_FALSE(s.contains("ppfb.1.w_kqv.weight"));
    CHECK_FALSE(s.contains("prompt.0.proj.weight"));

    ParamStore p2 = init_params(ppft, 1);
    CHECK(stores_equal(p, p2));
}

TEST_CASE("dead network: zero decoder weights, positive head bias") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 3);
    for (auto& [name, e] : params)
        if (starts_with(name, "decoder.")) e.value.fill(0.0);
    const double b0 = 1234.5;
    params.get("decoder.head.bias")[0] = b0;

    GuidanceTensor g = random_guidance(16, 16, 4);
    DepthMap sensor = random_depth(16, 16, 5);
    DepthMap out = enhance(g, sensor, params, cfg);
    for (std::size_t i = 0; i < out.depth.size(); ++i) {
        CHECK(out.depth[i] == b0);
        CHECK(out.valid[i] == 1.0);
    }
}

TEST_CASE("output dims equal input dims when divisible by 2^stages") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 7);
    for (auto hw : {std::size_t(16), std::size_t(32)}) {
        GuidanceTensor g = random_guidance(hw, hw, 8);
        DepthMap sensor = random_depth(hw, hw, 9);
        DepthMap out = enhance(g, sensor, params, cfg);
        CHECK(out.depth.dims() == std::vector<std::size_t>({hw, hw}));
    }
    GuidanceTensor g = random_guidance(18, 16, 10);
    DepthMap sensor = random_depth(18, 16, 11);
    CHECK_THROWS_AS(enhance(g, sensor, params, cfg), std::invalid_argument);
}

TEST_CASE("enhance output respects the (0, d_max] clamp and all-true mask") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 13);
    GuidanceTensor g = random_guidance(16, 16, 14);
    DepthMap sensor = random_depth(16, 16, 15);
    DepthMap out = enhance(g, sensor, params, cfg);
    for (std::size_t i = 0; i < out.depth.size(); ++i) {
        CHECK(out.depth[i] > 0.0);
        CHECK(out.depth[i] <= cfg.d_max);
        CHECK(out.valid[i] == 1.0);
    }
    DepthMap out2 = enhance(g, sensor, params, cfg);
    for (std::size_t i = 0; i < out.depth.size(); ++i) CHECK(out.depth[i] == out2.depth[i]);
}

TEST_CASE("loss analytic examples") {
    DepthMap gt{Tensor({1, 2}), Tensor({1, 2})};
    gt.depth[0] = 100.0;
    gt.depth[1] = 50.0;
    gt.valid[0] = 1.0;
    gt.valid[1] = 0.0;
    DepthMap pred = gt;
    CHECK(loss(pred, gt) == 0.0);

    pred.depth[0] = 102.0;  // single valid pixel, error 2 mm
    CHECK(loss(pred, gt) == doctest::Approx(6.0));

    DepthMap gt2{Tensor({1, 2}), Tensor({1, 2}, 1.0)};
    gt2.depth[0] = 10.0;
    gt2.depth[1] = 20.0;
    DepthMap pred2 = gt2;
    pred2.depth[0] = 11.0;  // error 1
    pred2.depth[1] = 23.0;  // error 3
    CHECK(loss(pred2, gt2) == doctest::Approx(7.0));

    DepthMap none{Tensor({1, 2}, 5.0), Tensor({1, 2}, 0.0)};
    CHECK_THROWS_AS(loss(pred, none), std::invalid_argument);

    // loss is non-negative and zero only at equality on the mask
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        DepthMap a = random_depth(2, 3, 200 + trial);
        DepthMap b = random_depth(2, 3, 300 + trial);
        CHECK(loss(a, b) >= 0.0);
    }
}

TEST_CASE("load_pretrained reports and the ppfb exclusion") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 17);

    ParamStore empty;
    LoadReport r0 = load_pretrained(params, empty, {});
    CHECK(r0.loaded.empty());
    std::size_t non_ppfb = 0;
    for (const auto& [name, e] : params) {
        (void)e;
        if (!starts_with(name, "ppfb.")) ++non_ppfb;
    }
    CHECK(r0.skipped_missing.size() == non_ppfb);

    ParamStore archive = params;
    for (auto& [name, e] : archive)
        if (!starts_with(name, "ppfb."))
            for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += 0.25;
    ParamStore target = init_params(cfg, 18);
    ParamStore target_before = target;
    LoadReport r1 = load_pretrained(target, archive, {});
    CHECK(r1.loaded.size() == non_ppfb);
    CHECK(r1.skipped_missing.empty());
    for (const std::string& name : r1.loaded) {
        const Tensor& a = archive.get(name);
        const Tensor& b = target.get(name);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
    for (const auto& [name, e] : target) {
        if (!starts_with(name, "ppfb.")) continue;
        const Tensor& before = target_before.get(name);
        for (std::size_t i = 0; i < e.value.size(); ++i) CHECK(e.value[i] == before[i]);
    }

    ParamStore bad = archive;
    bad.get("backbone.0.bias") = Tensor({3}, 0.0);
    ParamStore target2 = init_params(cfg, 19);
    LoadReport r2 = load_pretrained(target2, bad, {"enc."});
    CHECK(r2.skipped_shape_mismatch == std::vector<std::string>({"backbone.0.bias"}));
    CHECK(r2.loaded.size() == non_ppfb - 1);
    CHECK(!r2.frozen.empty());
    for (const std::string& name : r2.frozen) CHECK_FALSE(target2.trainable(name));
}

TEST_CASE("train_step: zero lr, frozen policy, determinism") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 23);
    GuidanceTensor g = random_guidance(16, 16, 24);
    DepthMap sensor = random_depth(16, 16, 25);
    DepthMap gt = random_depth(16, 16, 26);

    ParamStore before = params;
    StepResult r = train_step(params, g, sensor, gt, cfg, SgdOptions{0.0, 1.0}, 1);
    CHECK(r.loss_value > 0.0);
    CHECK(stores_equal(params, before));

    ModelConfig frozen_cfg = cfg;
    frozen_cfg.freeze_prefixes = {""};
    ParamStore frozen = init_params(frozen_cfg, 23);
    ParamStore frozen_before = frozen;
    train_step(frozen, g, sensor, gt, frozen_cfg, SgdOptions{0.5, 1.0}, 1);
    CHECK(stores_equal(frozen, frozen_before));

    ParamStore a = init_params(cfg, 23);
    ParamStore b = init_params(cfg, 23);
    for (int s = 0; s < 3; ++s) {
        train_step(a, g, sensor, gt, cfg, SgdOptions{0.02, 1.0}, 100 + s);
        train_step(b, g, sensor, gt, cfg, SgdOptions{0.02, 1.0}, 100 + s);
    }
    CHECK(stores_equal(a, b));
}

TEST_CASE("frozen prefixes stay bit-identical across many steps") {
    ModelConfig cfg = tiny_config();
    cfg.freeze_prefixes = {"backbone.", "decoder.up0."};
    ParamStore params = init_params(cfg, 31);
    ParamStore before = params;
    GuidanceTensor g = random_guidance(16, 16, 32);
    DepthMap sensor = random_depth(16, 16, 33);
    DepthMap gt = random_depth(16, 16, 34);
    for (int s = 0; s < 10; ++s) train_step(params, g, sensor, gt, cfg, SgdOptions{}, s);
    bool any_changed = false;
    for (const auto& [name, e] : params) {
        const Tensor& old = before.get(name);
        bool same = true;
        for (std::size_t i = 0; i < e.value.size(); ++i)
            if (e.value[i] != old[i]) same = false;
        if (starts_with(name, "backbone.") || starts_with(name, "decoder.up0."))
            CHECK(same);
        else if (!same)
            any_changed = true;
    }
    CHECK(any_changed);
}

TEST_CASE("overfitting a fixed 32x32 sample drives the loss down") {
    DatasetOptions opts;
    opts.seed = 2024;
    opts.scenes.height = opts.scenes.width = 32;
    SampleBundle sample = build_sample(opts, 0);

    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 41);
    std::vector<double> losses;
    for (int s = 0; s < 200; ++s)
        losses.push_back(train_step(params, sample.guidance, sample.sensor, sample.gt, cfg,
                                    SgdOptions{0.01, 1.0}, 7000 + s)
                             .loss_value);
    auto block_avg = [&](std::size_t from, std::size_t to) {
        double acc = 0.0;
        for (std::size_t i = from; i < to; ++i) acc += losses[i];
        return acc / static_cast<double>(to - from);
    };
    const double first = block_avg(0, 50);
    const double mid = block_avg(75, 125);
    const double last = block_avg(150, 200);
    CHECK(mid < first);
    CHECK(last < mid);
    CHECK(last < 0.5 * first);
}

TEST_CASE("trained toy model beats its own input sensor depth") {
    DatasetOptions opts;
    opts.seed = 77;
    opts.scenes.height = opts.scenes.width = 32;
    opts.degradations.cycle = {DegradationMode::StereoHoles};
    opts.degradations.hole_rate = 0.3;
    SampleBundle sample = build_sample(opts, 0);

    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 51);
    for (int s = 0; s < 220; ++s)
        train_step(params, sample.guidance, sample.sensor, sample.gt, cfg, SgdOptions{0.01, 1.0},
                   9000 + s);
    DepthMap pred = enhance(sample.guidance, sample.sensor, params, cfg);
    const double model_rmse = depth_metrics(pred, sample.gt).rmse;
    const double sensor_rmse = depth_metrics(sample.sensor, sample.gt).rmse;
    CHECK(model_rmse < sensor_rmse);
}

TEST_CASE("with fusion blocks and guidance branch zeroed, aolp/dolp cannot reach the output") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 61);
    for (auto& [name, e] : params) {
        if (!starts_with(name, "ppfb.") && !starts_with(name, "enc.guidance.")) continue;
        if (name.size() > 6 && name.compare(name.size() - 6, 6, "lambda") == 0) continue;
        e.value.fill(0.0);
    }
    Tensor& cw = params.get("enc.concat.weight");  // [w0, 7, 3, 3]
    for (std::size_t o = 0; o < cw.dim(0); ++o)
        for (std::size_t c = 0; c < 6; ++c)
            for (std::size_t k = 0; k < 9; ++k) cw[(o * 7 + c) * 9 + k] = 0.0;

    GuidanceTensor g1 = random_guidance(16, 16, 62);
    GuidanceTensor g2 = g1;
    Rng rng(63);
    const std::size_t plane = 16 * 16;
    for (std::size_t p = 0; p < plane; ++p) {
        g2.data[plane + p] = rng.uniform(0.0, kPi);
        g2.data[2 * plane + p] = rng.uniform(0.0, 1.0);
    }
    DepthMap sensor = random_depth(16, 16, 64);
    DepthMap o1 = enhance(g1, sensor, params, cfg);
    DepthMap o2 = enhance(g2, sensor, params, cfg);
    for (std::size_t i = 0; i < o1.depth.size(); ++i) CHECK(o1.depth[i] == o2.depth[i]);
}

TEST_CASE("incomplete parameter set is rejected") {
    ModelConfig cfg = tiny_config();
    ParamStore wrong = init_params(tiny_config(Ablation::NoPpft), 1);
    GuidanceTensor g = random_guidance(16, 16, 65);
    DepthMap sensor = random_depth(16, 16, 66);
    CHECK_THROWS_AS(enhance(g, sensor, wrong, cfg), std::invalid_argument);
}

TEST_CASE("model gradients agree with finite differences on a tiny instance") {
    ModelConfig cfg;
    cfg.widths = {2, 3};
    cfg.dropout_p = 0.0;
    cfg.ablation = Ablation::Ppft;
    ParamStore params = init_params(cfg, 71);

    GuidanceTensor g = random_guidance(8, 8, 72);
    DepthMap sensor = random_depth(8, 8, 73, 1200.0, 1800.0);
    DepthMap gt = random_depth(8, 8, 74, 1300.0, 1700.0);

    // recover the raw gradient from one unclipped step with a tiny rate
    const double lr = 1e-9;
    ParamStore stepped = params;
    train_step(stepped, g, sensor, gt, cfg, SgdOptions{lr, 0.0}, 5);
    ParamStore analytic;
    for (const auto& [name, e] : params) {
        Tensor grad(e.value.dims());
        const Tensor& after = stepped.get(name);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = (e.value[i] - after[i]) / lr;
        if (name == "decoder.head.weight" || name == "backbone.0.weight" ||
            name == "ppfb.0.w_kqv.weight" || name == "ppfb.0.lambda" ||
            name == "prompt.0.proj.weight" || name == "enc.guidance.weight" ||
            name == "decoder.up1.bias")
            analytic.add(name, grad);
    }

    auto f = [&](const ParamStore& theta) {
        DepthMap pred = enhance(g, sensor, theta, cfg);
        return loss(pred, gt);
    };
    CHECK(fd_gradcheck(f, params, analytic, 1e-5) < 1e-4);
}
