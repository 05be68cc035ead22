#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polarfuse/metrics.hpp"
#include "polarfuse/model.hpp"
#include "polarfuse/simulate.hpp"

namespace polarfuse {

struct SampleRecord {
    GuidanceTensor guidance;
    DepthMap sensor;
    DepthMap gt;
    std::string mode;
};

SampleRecord load_sample(const std::string& base_dir, const ManifestRow& row);
std::vector<SampleRecord> load_samples(const std::string& manifest_path);

struct TrainRunOptions {
    ModelConfig model;
    SgdOptions sgd;
    std::size_t steps = 200;
    std::uint64_t seed = 1;
    std::string foundation;  // optional PWA1 archive to warm-start from
};

struct TrainRunResult {
    ParamStore params;
    std::vector<StepResult> log;  // one entry per step
    LoadReport load_report;       // empty when no foundation was given
};

// Seeded single-threaded training loop: step s draws a with-replacement
// sample index and runs one train_step with a per-step dropout seed.
TrainRunResult train_run(const std::vector<SampleRecord>& samples, const TrainRunOptions& opt);

void write_loss_csv(const std::string& path, const std::vector<StepResult>& log);

struct EvalRow {
    std::string mode;  // degradation mode or "All"
    DepthMetrics metrics;
};

// Pixel-pooled metrics per degradation mode plus an "All" aggregate row.
std::vector<EvalRow> eval_run(const std::vector<SampleRecord>& samples, const ParamStore& params,
                              const ModelConfig& config, double threshold_base = 1.25);

void write_metrics_csv(const std::string& path, const std::vector<EvalRow>& rows);

double rmse_for_mode(const std::vector<EvalRow>& rows, const std::string& mode);

}  // namespace polarfuse
