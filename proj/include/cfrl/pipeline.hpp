#pragma once

#include "cfrl/metrics.hpp"
#include "cfrl/store.hpp"

namespace cfrl {

struct PipelineError : std::runtime_error {
    std::string stage;
    PipelineError(std::string stage_name, const std::string& why)
        : std::runtime_error("stage " + stage_name + " failed: " + why), stage(std::move(stage_name)) {}
};

struct StageStatus {
    std::string name;
    bool cached = false;
    std::vector<std::string> outputs;
};

struct PipelineResult {
    std::vector<StageStatus> stages;
    std::string manifest_path;
    int cf_count = 0;
    int rule_count = 0;
    MetricReport report;
};

// Runs train-teacher -> distill -> gen-cf -> eval-metrics -> extract-rules,
// skipping stages whose recorded input digests match and whose outputs are
// intact. All randomness derives from the root `seed` key.
PipelineResult run_pipeline(const KeyValueConfig& cfg, const std::string& out_dir,
                            std::ostream* log = nullptr);

// Shared knobs with CLI subcommands.
struct DistillParams {
    std::string loss = "kl";
    double tau = -1.0;  // <0: 0.01 for dqn teachers, 0.7 for a2c
    int n = 50000;
    double eps_mix = 0.2;
    int epochs = 12;
    int batch = 64;
    double lr = 1e-3;
    double holdout = 0.1;
    int hidden = 256;

    static DistillParams from_kv(const KeyValueConfig& kv);
    double resolved_tau(Algo algo) const;
    uint64_t digest() const;
};

void log_json(std::ostream* out, const std::string& stage, const std::string& event,
              const std::string& detail = "");

}  // namespace cfrl
