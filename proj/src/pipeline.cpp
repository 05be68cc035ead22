#include "polarfuse/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "polarfuse/rng.hpp"
#include "polarfuse/tensor_io.hpp"

namespace polarfuse {

SampleRecord load_sample(const std::string& base_dir, const ManifestRow& row) {
    const std::filesystem::path base(base_dir);
    SampleRecord s;
    s.guidance = GuidanceTensor{read_pft1((base / row.guidance).string())};
    if (s.guidance.data.rank() != 3 || s.guidance.data.dim(0) != 6)
        throw IoError("load_sample: guidance file is not [6,H,W]: " + row.guidance);
    s.sensor = DepthMap::from_stack(read_pft1((base / row.sensor).string()));
    s.gt = DepthMap::from_stack(read_pft1((base / row.gt).string()));
    s.mode = row.mode;
    return s;
}

std::vector<SampleRecord> load_samples(const std::string& manifest_path) {
    const std::string base = std::filesystem::path(manifest_path).parent_path().string();
    std::vector<SampleRecord> out;
    for (const ManifestRow& row : read_manifest(manifest_path))
        out.push_back(load_sample(base.empty() ? "." : base, row));
    return out;
}

TrainRunResult train_run(const std::vector<SampleRecord>& samples, const TrainRunOptions& opt) {
    if (samples.empty()) throw std::invalid_argument("train_run: no samples");
    TrainRunResult result;
    result.params = init_params(opt.model, opt.seed);
    if (!opt.foundation.empty()) {
        ParamStore archive = read_pwa1(opt.foundation);
        result.load_report = load_pretrained(result.params, archive, opt.model.freeze_prefixes);
    } else {
        apply_freeze(result.params, opt.model.freeze_prefixes);
    }

    Rng order(mix_seed(opt.seed, 0x0BDE8));
    result.log.reserve(opt.steps);
    for (std::size_t step = 0; step < opt.steps; ++step) {
        const std::size_t idx = static_cast<std::size_t>(
            order.uniform_int(0, static_cast<std::int64_t>(samples.size()) - 1));
        const SampleRecord& s = samples[idx];
        result.log.push_back(train_step(result.params, s.guidance, s.sensor, s.gt, opt.model,
                                        opt.sgd, mix_seed(opt.seed, 0x57E0 + step)));
    }
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<StepResult>& log) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_loss_csv: cannot open '" + path + "'");
    os << "step,loss,rmse,mae\n";
    char buf[160];
    for (std::size_t i = 0; i < log.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g\n", i, log[i].loss_value,
                      log[i].rmse, log[i].mae);
        os << buf;
    }
    if (!os) throw IoError("write_loss_csv: write failure on '" + path + "'");
}

std::vector<EvalRow> eval_run(const std::vector<SampleRecord>& samples, const ParamStore& params,
                              const ModelConfig& config, double threshold_base) {
    if (samples.empty()) throw std::invalid_argument("eval_run: no samples");
    const double t1 = threshold_base;
    const double t2 = t1 * threshold_base;
    const double t3 = t2 * threshold_base;

    struct Acc {
        double sum_sq = 0.0, sum_abs = 0.0;
        std::size_t c1 = 0, c2 = 0, c3 = 0, n = 0;
    };
    std::map<std::string, Acc> by_mode;
    Acc all;

    for (const SampleRecord& s : samples) {
        DepthMap pred = enhance(s.guidance, s.sensor, params, config);
        Acc& acc = by_mode[s.mode];
        for (std::size_t i = 0; i < s.gt.depth.size(); ++i) {
            if (s.gt.valid[i] == 0.0) continue;
            const double p = pred.depth[i];
            const double g = s.gt.depth[i];
            const double e = p - g;
            const double ratio =
                p > 0.0 ? std::max(p / g, g / p) : std::numeric_limits<double>::infinity();
            for (Acc* a : {&acc, &all}) {
                a->sum_sq += e * e;
                a->sum_abs += std::abs(e);
                if (ratio < t1) ++a->c1;
                if (ratio < t2) ++a->c2;
                if (ratio < t3) ++a->c3;
                ++a->n;
            }
        }
    }

    auto to_metrics = [](const Acc& a) {
        DepthMetrics m;
        m.n_pixels = a.n;
        if (a.n == 0) return m;
        const double n = static_cast<double>(a.n);
        m.rmse = std::sqrt(a.sum_sq / n);
        m.mae = a.sum_abs / n;
        m.delta1 = static_cast<double>(a.c1) / n;
        m.delta2 = static_cast<double>(a.c2) / n;
        m.delta3 = static_cast<double>(a.c3) / n;
        return m;
    };

    std::vector<EvalRow> rows;
    for (const auto& [mode, acc] : by_mode) rows.push_back(EvalRow{mode, to_metrics(acc)});
    rows.push_back(EvalRow{"All", to_metrics(all)});
    return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_metrics_csv: cannot open '" + path + "'");
    os << "mode,rmse_mm,mae_mm,delta1,delta2,delta3,n_pixels\n";
    char buf[256];
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%zu\n", r.mode.c_str(),
                      r.metrics.rmse, r.metrics.mae, r.metrics.delta1, r.metrics.delta2,
                      r.metrics.delta3, r.metrics.n_pixels);
        os << buf;
    }
    if (!os) throw IoError("write_metrics_csv: write failure on '" + path + "'");
}

double rmse_for_mode(const std::vector<EvalRow>& rows, const std::string& mode) {
    for (const EvalRow& r : rows)
        if (r.mode == mode) return r.metrics.rmse;
    throw std::invalid_argument("rmse_for_mode: no row for mode '" + mode + "'");
}

}  // namespace polarfuse
