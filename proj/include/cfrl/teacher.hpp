#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>

#include "cfrl/env.hpp"
#include "cfrl/network.hpp"

namespace cfrl {

enum class Algo { DQN, A2C };
std::string algo_name(Algo a);
Algo algo_from(const std::string& name);

struct SoftAction {
    enum class Kind { QValues, Logits };
    std::vector<float> values;
    Kind kind = Kind::QValues;
    int best() const { return argmax(values); }
};

// Anything that maps a stacked raster to per-action scores. Trained teachers
// implement this; validation fixtures can too.
struct RasterPolicy {
    virtual ~RasterPolicy() = default;
    virtual std::vector<float> soft_values(const RasterObs& s) const = 0;
    virtual int action_count() const = 0;
    int greedy(const RasterObs& s) const { return argmax(soft_values(s)); }
};

struct TeacherModel final : RasterPolicy {
    Network net;
    Algo algo = Algo::DQN;
    EnvKind env = EnvKind::Highway;
    int actions = 0;  // a2c nets carry one extra value-head output
    int64_t train_steps = 0;
    double final_epsilon = 0.0;
    uint64_t seed = 0;

    std::vector<float> soft_values(const RasterObs& s) const override;
    int action_count() const override { return actions; }
    double state_value(const RasterObs& s) const;  // a2c only
};

SoftAction soft_action(const TeacherModel& model, const RasterObs& s);

// Conv stack sized to the observation. Rasters of paper scale (>= 84 px) get
// the full three-conv architecture; desk-scale rasters drop layers that no
// longer fit and use a narrower head.
std::vector<LayerSpec> teacher_arch(int h, int w, int outputs);
std::vector<LayerSpec> student_arch(int hidden, int outputs);

// ---------------------------------------------------------------------------
// rollout surface used by the trainers; tests plug in tiny synthetic tasks

struct RolloutEnv {
    virtual ~RolloutEnv() = default;
    virtual void reset(uint64_t seed) = 0;
    virtual const RasterObs& raster() const = 0;
    virtual StepOut step(int action) = 0;
    virtual int action_count() const = 0;
    virtual std::array<int, 3> obs_shape() const = 0;  // h, w, k
};

class SessionEnv final : public RolloutEnv {
public:
    SessionEnv(EnvConfig cfg, uint64_t seed) : session_(std::move(cfg), seed) {}
    void reset(uint64_t seed) override { session_.reset(seed); }
    const RasterObs& raster() const override { return session_.raster(); }
    StepOut step(int action) override { return session_.step(action); }
    int action_count() const override { return session_.config().action_count(); }
    std::array<int, 3> obs_shape() const override {
        return {session_.config().raster_h, session_.config().raster_w, session_.config().history};
    }
    EnvSession& session() { return session_; }

private:
    EnvSession session_;
};

// ---------------------------------------------------------------------------
// hyperparameters

struct DqnHyper {
    double gamma = 0.9;
    int replay_capacity = 20000;
    int batch = 32;
    int target_sync = 1000;
    double eps_start = 1.0, eps_end = 0.05;
    int eps_decay_steps = 0;  // 0 -> 60% of total_steps
    int total_steps = 150000;
    double lr = 5e-4;
    int warmup = 1000;
    int train_every = 1;
    std::vector<LayerSpec> arch;  // empty -> teacher_arch for the observation

    static DqnHyper from_kv(const KeyValueConfig& kv);
    void validate() const;
    uint64_t digest() const;
};

struct A2cHyper {
    double gamma = 0.99;
    int n_steps = 5;
    int workers = 8;
    double lr = 7e-4;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    int total_steps = 300000;  // env steps across all workers
    std::vector<LayerSpec> arch;

    static A2cHyper from_kv(const KeyValueConfig& kv);
    void validate() const;
    uint64_t digest() const;
};

double epsilon_at(const DqnHyper& h, int64_t step);

struct TrainLogEntry {
    int64_t step = 0;
    double episode_reward = 0;
    double loss = 0;
    double epsilon = 0;
};

struct TrainResult {
    TeacherModel model;
    std::vector<TrainLogEntry> log;
};

// Observers for tests: called once per environment step after any update.
using StepProbe = std::function<void(int64_t step, const Network& online, const Network& target)>;

TrainResult train_dqn(const EnvConfig& env_cfg, const DqnHyper& hyper, uint64_t seed,
                      std::ostream* log_stream = nullptr);
TrainResult train_dqn_env(RolloutEnv& env, const DqnHyper& hyper, uint64_t seed,
                          std::ostream* log_stream = nullptr, const StepProbe& probe = nullptr);

TrainResult train_a2c(const EnvConfig& env_cfg, const A2cHyper& hyper, uint64_t seed,
                      std::ostream* log_stream = nullptr);
TrainResult train_a2c_env(std::vector<std::unique_ptr<RolloutEnv>>& envs, const A2cHyper& hyper,
                          uint64_t seed, std::ostream* log_stream = nullptr);

// ---------------------------------------------------------------------------
// evaluation

struct EvalResult {
    double mean_reward = 0;
    std::vector<double> per_trial;
};

using RasterActionPolicy = std::function<int(const RasterObs&)>;

EvalResult evaluate_policy(const RasterPolicy& policy, const EnvConfig& cfg, int trials,
                           int episodes_per_trial, uint64_t seed);
EvalResult evaluate_action_policy(const RasterActionPolicy& act, const EnvConfig& cfg, int trials,
                                  int episodes_per_trial, uint64_t seed);
EvalResult evaluate_random(const EnvConfig& cfg, int trials, int episodes_per_trial, uint64_t seed);

}  // namespace cfrl
