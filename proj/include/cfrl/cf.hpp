#pragma once

#include <optional>

#include "cfrl/distill.hpp"

namespace cfrl {

struct CFConfig {
    // lambda_max follows the normalised weight convention w in (0,1); the raw
    // optimisation coefficient is w/(1-w). lambda_init and growth are raw.
    double lambda_init = 0.1;
    double lambda_max = 0.99;
    double lambda_growth = 2.0;
    int inner_steps = 200;
    double input_lr = 0.05;
    int max_outer = 32;
    double move_tol = 1e-7;  // inner early stop when the iterate freezes
    double delta = 0.0;      // continuous-action validity threshold; unused for discrete actions
    std::vector<FeatureInfo> features;   // box bounds + frozen mask per feature
    std::optional<double> quant_grid;    // optional grid projection (normalised units)

    double lambda_max_raw() const;
    void validate(int feature_dim) const;

    static CFConfig from_kv(const KeyValueConfig& kv);
    uint64_t digest() const;
};

struct CFResult {
    std::vector<float> sigma;      // query state
    std::vector<float> sigma_cf;   // candidate
    int original_action = -1;      // student argmax at sigma
    int target_action = -1;
    bool converged = false;        // student argmax flipped to the target
    int iterations = 0;            // inner gradient steps executed
    double dist = 0.0;             // L2(sigma, sigma_cf)
    int validity = 0;
    // filled by validate_cf
    bool rendered = false;
    int teacher_action_orig = -1;
    int teacher_action_cf = -1;
    int student_action_cf = -1;
    std::string status = "ok";
};

// Wachter loss with the squared target-probability surrogate for the
// prediction term: lambda * (p_target - 1)^2 + ||sigma - sigma_cf||_2.
double cf_loss(const Network& student, const std::vector<float>& sigma_cf, double lambda_raw,
               const std::vector<float>& sigma, int target_action);

// Clamps to the box bounds, snaps to the grid when configured, and restores
// frozen features from `original`. Idempotent.
std::vector<float> project_feasible(std::vector<float> sigma, const CFConfig& cfg,
                                    const std::vector<float>& original);

CFResult generate_cf(const StudentModel& student, const std::vector<float>& sigma,
                     int target_action, const CFConfig& cfg);

// Eq-style validity: teacher action changes on the rendered pair and matches
// the student's counterfactual action. Renders and fills the result fields.
int validate_cf(const RasterPolicy& teacher, const StudentModel& student, CFResult& result,
                const EnvConfig& env_cfg);

struct CFQuery {
    std::vector<float> sigma;
    int target_action = -1;
};

struct BatchSummary {
    int n = 0;
    int n_converged = 0;
    int n_valid = 0;
    double validity_pct = 0.0;
    double convergence_pct = 0.0;
    double mean_dist = 0.0;  // over converged results
};

std::vector<CFResult> run_batch(const std::vector<CFQuery>& queries, const RasterPolicy& teacher,
                                const StudentModel& student, const EnvConfig& env_cfg,
                                const CFConfig& cf_cfg, BatchSummary* summary = nullptr);

BatchSummary summarize(const std::vector<CFResult>& results);

// Samples query states from teacher-greedy rollouts and assigns a target
// action != the student's action. `target_action` < 0 picks the student's
// runner-up; otherwise the fixed action is used (states already mapped to it
// are skipped).
std::vector<CFQuery> sample_queries(const RasterPolicy& teacher, const StudentModel& student,
                                    const EnvConfig& cfg, int count, int target_action,
                                    uint64_t seed);

std::string cf_result_to_json(const CFResult& r);
CFResult cf_result_from_json(const std::string& line);

}  // namespace cfrl
