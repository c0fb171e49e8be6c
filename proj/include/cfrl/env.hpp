#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "cfrl/common.hpp"
#include "cfrl/config.hpp"

namespace cfrl {

enum class EnvKind { Highway, Pong };

std::string env_kind_name(EnvKind k);
EnvKind env_kind_from(const std::string& name);

// Highway actions, in this order.
enum HighwayAction : int { kLeft = 0, kRight = 1, kFaster = 2, kIdle = 3, kSlower = 4 };
// Pong actions.
enum PongAction : int { kNoop = 0, kUp = 1, kDown = 2 };

std::string action_name(EnvKind kind, int action);

struct Entity {
    double x = 0, y = 0, vx = 0, vy = 0;
    bool present = false;
};

struct EnvConfig {
    EnvKind kind = EnvKind::Highway;

    // observation geometry
    int raster_w = 64, raster_h = 32;
    int history = 4;  // stacked frames K
    int episode_len = 30;

    // physics
    double dt = 0.25;
    int substeps = 4;  // physics sub-steps per action (pong uses 1)

    // highway
    int lanes = 3;
    int vehicle_slots = 6;  // ego + 5 participant vehicles
    double lane_width = 4.0;
    double u_min = 20.0, u_max = 30.0;
    double beta = 5.0;  // collision penalty coefficient
    double speed_step = 2.5;
    double vy_max = 4.0;
    double vehicle_length = 5.0, vehicle_width = 2.0;
    double x_range = 64.0;     // longitudinal feature range (+-), render window length
    double window_back = 20.0; // metres of road visible behind the ego
    double y_span = 16.0;      // metres of lateral world mapped onto raster_h

    // pong
    double board = 42.0;
    double paddle_h = 7.0, paddle_w = 2.0;
    double paddle_inset = 3.0;  // paddle centre distance from its wall
    double ball_r = 1.0;
    double ball_speed = 2.0;
    double agent_speed = 2.0, opp_speed = 1.0, opp_deadzone = 2.0;
    double vy_frac = 0.7;       // max |vy|/speed off a paddle edge
    int goals_to_end = 5;
    bool simple_bounce = false; // paddle hits flip vx only (keeps integer dynamics)
    double norm_scale = 64.0;   // pong feature normalisation divisor

    static EnvConfig highway_defaults();
    static EnvConfig pong_defaults();
    // Reads "env.*" keys layered over the defaults for env.kind.
    static EnvConfig from_kv(const KeyValueConfig& kv);

    void validate() const;  // throws ConfigError
    int action_count() const { return kind == EnvKind::Highway ? 5 : 3; }
    int feature_dim() const {
        return kind == EnvKind::Highway ? vehicle_slots * 4 : history * 4;
    }
    double action_dt() const { return dt * substeps; }
    uint64_t digest() const;
};

struct EnvState {
    EnvKind kind = EnvKind::Highway;
    int tick = 0;
    std::vector<Entity> entities;  // highway: [0]=ego then PVs; pong: [agent, opponent, ball]
    std::mt19937 rng;
    bool done = false;

    // highway
    int ego_target_lane = 0;
    bool collided = false;

    // pong
    int goals_agent = 0, goals_opp = 0;
    // raw object frames (oldest first), 4 values per frame: agent_y, opp_y, ball_x, ball_y
    std::vector<double> obj_history;

    uint64_t digest() const;
};

struct StepOut {
    double reward = 0;
    bool done = false;
};

EnvState reset(const EnvConfig& cfg, uint64_t seed);
StepOut step_inplace(const EnvConfig& cfg, EnvState& state, int action);
std::tuple<EnvState, double, bool> step(const EnvConfig& cfg, const EnvState& state, int action);

// ---------------------------------------------------------------------------
// observations

struct RasterObs {
    int h = 0, w = 0, k = 0;
    std::vector<float> data;  // ((y*w)+x)*k + frame, frame k-1 most recent, values in [0,1]

    float at(int y, int x, int f) const { return data[(static_cast<size_t>(y) * w + x) * k + f]; }
    float& at(int y, int x, int f) { return data[(static_cast<size_t>(y) * w + x) * k + f]; }
    std::vector<float> frame(int f) const;
    bool same_shape(const RasterObs& o) const { return h == o.h && w == o.w && k == o.k; }
};

// Ring of prior single frames backing the stacked observation.
struct FrameStack {
    std::deque<std::vector<float>> frames;  // most recent at back, at most K-1 entries
    void clear() { frames.clear(); }
};

// Renders the current frame, stacks it over the history (padding by repeating
// the oldest frame), and appends it to the history ring.
RasterObs observe_raster(const EnvConfig& cfg, const EnvState& state, FrameStack& history);

// Normalised object-list features; exact round-trip with denormalisation.
std::vector<float> observe_objects(const EnvConfig& cfg, const EnvState& state);

// Rebuilds the full K-frame raster from an object list alone. Highway history
// is back-extrapolated at constant velocity; pong stores one frame per feature
// group. Throws InfeasibleState when features decode out of bounds.
RasterObs render_from_objects(const std::vector<float>& sigma, const EnvConfig& cfg);

// ---------------------------------------------------------------------------
// counterfactual feature metadata

struct FeatureInfo {
    std::string name;
    double lo = -1.0, hi = 1.0;  // box bounds in normalised units
    bool frozen = false;         // default frozen mask (ego features on highway)
};

// Per-feature bounds/mask for a query state. Highway bounds depend on the
// (frozen) ego features inside `sigma`.
std::vector<FeatureInfo> feature_info(const EnvConfig& cfg, const std::vector<float>& sigma);

// ---------------------------------------------------------------------------
// rollout convenience

class EnvSession {
public:
    EnvSession(EnvConfig cfg, uint64_t seed);
    void reset(uint64_t seed);
    StepOut step(int action);

    const EnvConfig& config() const { return cfg_; }
    const EnvState& state() const { return state_; }
    const RasterObs& raster() const { return raster_; }
    std::vector<float> objects() const { return observe_objects(cfg_, state_); }
    bool done() const { return state_.done; }

private:
    EnvConfig cfg_;
    EnvState state_;
    FrameStack stack_;
    RasterObs raster_;
};

// One JSON-lines trajectory record.
std::string trajectory_record(int tick, int action, double reward,
                              const std::vector<float>& objects, bool done);

}  // namespace cfrl
