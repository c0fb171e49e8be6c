#include "cfrl/env.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cfrl {

std::string env_kind_name(EnvKind k) { return k == EnvKind::Highway ? "highway" : "pong"; }

EnvKind env_kind_from(const std::string& name) {
    if (name == "highway") return EnvKind::Highway;
    if (name == "pong") return EnvKind::Pong;
    throw ConfigError("unknown environment kind: " + name + " (expected highway or pong)");
}

std::string action_name(EnvKind kind, int action) {
    static const char* hw[] = {"Left", "Right", "Faster", "Idle", "Slower"};
    static const char* pg[] = {"NOOP", "Up", "Down"};
    if (kind == EnvKind::Highway && action >= 0 && action < 5) return hw[action];
    if (kind == EnvKind::Pong && action >= 0 && action < 3) return pg[action];
    return "action" + std::to_string(action);
}

// ---------------------------------------------------------------------------
// config

EnvConfig EnvConfig::highway_defaults() {
    EnvConfig c;
    c.kind = EnvKind::Highway;
    return c;
}

EnvConfig EnvConfig::pong_defaults() {
    EnvConfig c;
    c.kind = EnvKind::Pong;
    c.raster_w = 42;
    c.raster_h = 42;
    c.substeps = 1;
    c.dt = 1.0;
    c.episode_len = 1200;
    return c;
}

EnvConfig EnvConfig::from_kv(const KeyValueConfig& kv) {
    EnvKind kind = env_kind_from(kv.get_str("env.kind", "highway"));
    EnvConfig c = kind == EnvKind::Highway ? highway_defaults() : pong_defaults();
    c.raster_w = static_cast<int>(kv.get_int("env.raster_w", c.raster_w));
    c.raster_h = static_cast<int>(kv.get_int("env.raster_h", c.raster_h));
    c.history = static_cast<int>(kv.get_int("env.history", c.history));
    c.episode_len = static_cast<int>(kv.get_int("env.episode_len", c.episode_len));
    c.dt = kv.get_double("env.dt", c.dt);
    c.substeps = static_cast<int>(kv.get_int("env.substeps", c.substeps));
    c.lanes = static_cast<int>(kv.get_int("env.lanes", c.lanes));
    c.vehicle_slots = static_cast<int>(kv.get_int("env.vehicle_slots", c.vehicle_slots));
    c.lane_width = kv.get_double("env.lane_width", c.lane_width);
    c.u_min = kv.get_double("env.u_min", c.u_min);
    c.u_max = kv.get_double("env.u_max", c.u_max);
    c.beta = kv.get_double("env.beta", c.beta);
    c.speed_step = kv.get_double("env.speed_step", c.speed_step);
    c.vy_max = kv.get_double("env.vy_max", c.vy_max);
    c.vehicle_length = kv.get_double("env.vehicle_length", c.vehicle_length);
    c.vehicle_width = kv.get_double("env.vehicle_width", c.vehicle_width);
    c.x_range = kv.get_double("env.x_range", c.x_range);
    c.window_back = kv.get_double("env.window_back", c.window_back);
    c.y_span = kv.get_double("env.y_span", c.y_span);
    c.board = kv.get_double("env.board", c.board);
    c.paddle_h = kv.get_double("env.paddle_h", c.paddle_h);
    c.paddle_w = kv.get_double("env.paddle_w", c.paddle_w);
    c.paddle_inset = kv.get_double("env.paddle_inset", c.paddle_inset);
    c.ball_r = kv.get_double("env.ball_r", c.ball_r);
    c.ball_speed = kv.get_double("env.ball_speed", c.ball_speed);
    c.agent_speed = kv.get_double("env.agent_speed", c.agent_speed);
    c.opp_speed = kv.get_double("env.opp_speed", c.opp_speed);
    c.opp_deadzone = kv.get_double("env.opp_deadzone", c.opp_deadzone);
    c.vy_frac = kv.get_double("env.vy_frac", c.vy_frac);
    c.goals_to_end = static_cast<int>(kv.get_int("env.goals_to_end", c.goals_to_end));
    c.simple_bounce = kv.get_bool("env.simple_bounce", c.simple_bounce);
    c.norm_scale = kv.get_double("env.norm_scale", c.norm_scale);
    c.validate();
    return c;
}

void EnvConfig::validate() const {
    if (u_min >= u_max) throw ConfigError("env.u_min must be < env.u_max");
    if (beta <= 0) throw ConfigError("env.beta must be > 0");
    if (history < 1) throw ConfigError("env.history must be >= 1");
    if (raster_w < 8 || raster_h < 8) throw ConfigError("raster must be at least 8x8");
    if (episode_len < 1) throw ConfigError("env.episode_len must be >= 1");
    if (dt <= 0 || substeps < 1) throw ConfigError("env.dt and env.substeps must be positive");
    if (kind == EnvKind::Highway) {
        if (lanes < 1) throw ConfigError("env.lanes must be >= 1");
        if (vehicle_slots < 2) throw ConfigError("env.vehicle_slots must be >= 2");
        if (lane_width <= vehicle_width) throw ConfigError("env.lane_width must exceed vehicle width");
        if (y_span < lanes * lane_width) throw ConfigError("env.y_span must cover the road");
        if (x_range <= window_back) throw ConfigError("env.x_range must exceed env.window_back");
        if (speed_step <= 0 || vy_max <= 0) throw ConfigError("speed_step and vy_max must be positive");
    } else {
        if (board <= 4 * ball_r) throw ConfigError("env.board too small for the ball");
        if (paddle_h >= board) throw ConfigError("env.paddle_h must be < env.board");
        if (ball_speed <= 0 || agent_speed <= 0 || opp_speed <= 0)
            throw ConfigError("pong speeds must be positive");
        if (vy_frac <= 0 || vy_frac >= 1) throw ConfigError("env.vy_frac must be in (0,1)");
        if (goals_to_end < 1) throw ConfigError("env.goals_to_end must be >= 1");
        if (norm_scale < board) throw ConfigError("env.norm_scale must be >= env.board");
    }
}

uint64_t EnvConfig::digest() const {
    std::ostringstream s;
    s << env_kind_name(kind) << ' ' << raster_w << ' ' << raster_h << ' ' << history << ' '
      << episode_len << ' ' << dt << ' ' << substeps << ' ' << lanes << ' ' << vehicle_slots << ' '
      << lane_width << ' ' << u_min << ' ' << u_max << ' ' << beta << ' ' << speed_step << ' '
      << vy_max << ' ' << vehicle_length << ' ' << vehicle_width << ' ' << x_range << ' '
      << window_back << ' ' << y_span << ' ' << board << ' ' << paddle_h << ' ' << paddle_w << ' '
      << paddle_inset << ' ' << ball_r << ' ' << ball_speed << ' ' << agent_speed << ' '
      << opp_speed << ' ' << opp_deadzone << ' ' << vy_frac << ' ' << goals_to_end << ' '
      << simple_bounce << ' ' << norm_scale;
    return fnv1a64(s.str());
}

uint64_t EnvState::digest() const {
    std::ostringstream s;
    s << env_kind_name(kind) << ' ' << tick << ' ' << done << ' ' << collided << ' '
      << ego_target_lane << ' ' << goals_agent << ' ' << goals_opp << '\n';
    s.precision(17);
    for (const auto& e : entities)
        s << e.x << ' ' << e.y << ' ' << e.vx << ' ' << e.vy << ' ' << e.present << '\n';
    for (double v : obj_history) s << v << ' ';
    s << '\n' << rng;
    return fnv1a64(s.str());
}

// ---------------------------------------------------------------------------
// internal geometry

namespace {

std::vector<float> render_current_frame(const EnvConfig& cfg, const EnvState& st);

// Feature normalisation divisors. All defaults are powers of two so that
// normalise/denormalise round-trips are exact in floating point, which in
// turn makes the object-list -> raster round-trip bit-exact.
struct HwScales {
    double dx, dy, v, vy;
};
HwScales hw_scales(const EnvConfig& c) {
    return {c.x_range, c.y_span, c.x_range / 4.0, c.x_range / 8.0};
}

double lane_center(const EnvConfig& c, int lane) { return (lane + 0.5) * c.lane_width; }

struct HwPv {
    double dx = 0, dy = 0, dvx = 0, dvy = 0;
    bool present = false;
};

// Ego-frame snapshot; the single source both the rasteriser and the
// object-list features are computed from.
struct HighwayView {
    double ego_y = 0, ego_du = 0, ego_vy = 0;  // ego_du = u - u_min
    std::vector<HwPv> pvs;                     // canonical nearest-first order
};

HighwayView build_highway_view(const EnvConfig& c, const EnvState& st) {
    const Entity& ego = st.entities[0];
    HighwayView v;
    v.ego_y = ego.y;
    v.ego_du = ego.vx - c.u_min;
    v.ego_vy = ego.vy;
    std::vector<HwPv> cand;
    for (size_t i = 1; i < st.entities.size(); ++i) {
        const Entity& e = st.entities[i];
        if (!e.present) continue;
        HwPv p;
        p.dx = e.x - ego.x;
        p.dy = e.y - ego.y;
        p.dvx = e.vx - ego.vx;
        p.dvy = e.vy - ego.vy;
        p.present = true;
        if (std::abs(p.dx) > c.x_range) continue;  // outside the feature window
        cand.push_back(p);
    }
    std::sort(cand.begin(), cand.end(), [](const HwPv& a, const HwPv& b) {
        double aa = std::abs(a.dx), ab = std::abs(b.dx);
        if (aa != ab) return aa < ab;
        if (a.dx != b.dx) return a.dx < b.dx;
        if (a.dy != b.dy) return a.dy < b.dy;
        return a.dvx < b.dvx;
    });
    cand.resize(static_cast<size_t>(c.vehicle_slots - 1));
    v.pvs = std::move(cand);
    return v;
}

struct PongView {
    double agent_y = 0, opp_y = 0, ball_x = 0, ball_y = 0;
};

PongView pong_current(const EnvState& st) {
    return {st.entities[0].y, st.entities[1].y, st.entities[2].x, st.entities[2].y};
}

// ---------------------------------------------------------------------------
// rasteriser

constexpr float kLaneLine = 0.25f;
constexpr float kPvValue = 0.6f;
constexpr float kEgoValue = 1.0f;
constexpr float kPaddleValue = 1.0f;
constexpr float kBallValue = 0.8f;

void fill_rect(std::vector<float>& img, int H, int W, int x0, int x1, int y0, int y1, float v) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, W);
    y1 = std::min(y1, H);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img[static_cast<size_t>(y) * W + x] = v;
}

// Renders one highway frame `lookback` seconds before the view's instant,
// assuming constant velocities over that horizon.
std::vector<float> render_highway_frame(const EnvConfig& c, const HighwayView& v, double lookback) {
    const int W = c.raster_w, H = c.raster_h;
    std::vector<float> img(static_cast<size_t>(W) * H, 0.0f);
    const double sx = W / c.x_range;
    const double sy = H / c.y_span;
    const double y_lo = -(c.y_span - c.lanes * c.lane_width) / 2.0;
    for (int lane = 0; lane <= c.lanes; ++lane) {
        int row = static_cast<int>(std::lround((lane * c.lane_width - y_lo) * sy));
        if (row >= 0 && row < H)
            for (int x = 0; x < W; ++x) img[static_cast<size_t>(row) * W + x] = kLaneLine;
    }
    auto draw_vehicle = [&](double rel_x, double y, float value) {
        int x0 = static_cast<int>(std::lround((rel_x - c.vehicle_length / 2 + c.window_back) * sx));
        int x1 = static_cast<int>(std::lround((rel_x + c.vehicle_length / 2 + c.window_back) * sx));
        int y0 = static_cast<int>(std::lround((y - c.vehicle_width / 2 - y_lo) * sy));
        int y1 = static_cast<int>(std::lround((y + c.vehicle_width / 2 - y_lo) * sy));
        fill_rect(img, H, W, x0, x1, y0, y1, value);
    };
    for (const auto& p : v.pvs) {
        if (!p.present) continue;
        double rel_x = p.dx - p.dvx * lookback;
        double y = v.ego_y + p.dy - (v.ego_vy + p.dvy) * lookback;
        draw_vehicle(rel_x, y, kPvValue);
    }
    draw_vehicle(0.0, v.ego_y - v.ego_vy * lookback, kEgoValue);
    return img;
}

std::vector<float> render_pong_frame(const EnvConfig& c, const PongView& v) {
    const int W = c.raster_w, H = c.raster_h;
    std::vector<float> img(static_cast<size_t>(W) * H, 0.0f);
    const double s = W / c.board;
    auto px = [&](double u) { return static_cast<int>(std::lround(u * s)); };
    const double agent_x = c.board - c.paddle_inset;
    const double opp_x = c.paddle_inset;
    fill_rect(img, H, W, px(agent_x - c.paddle_w / 2), px(agent_x + c.paddle_w / 2),
              px(v.agent_y - c.paddle_h / 2), px(v.agent_y + c.paddle_h / 2), kPaddleValue);
    fill_rect(img, H, W, px(opp_x - c.paddle_w / 2), px(opp_x + c.paddle_w / 2),
              px(v.opp_y - c.paddle_h / 2), px(v.opp_y + c.paddle_h / 2), kPaddleValue);
    fill_rect(img, H, W, px(v.ball_x - c.ball_r), px(v.ball_x + c.ball_r),
              px(v.ball_y - c.ball_r), px(v.ball_y + c.ball_r), kBallValue);
    return img;
}

void push_obj_history(const EnvConfig& c, EnvState& st) {
    if (c.kind != EnvKind::Pong) return;
    PongView v = pong_current(st);
    st.obj_history.insert(st.obj_history.end(), {v.agent_y, v.opp_y, v.ball_x, v.ball_y});
    size_t keep = static_cast<size_t>(c.history) * 4;
    if (st.obj_history.size() > keep)
        st.obj_history.erase(st.obj_history.begin(),
                             st.obj_history.begin() + (st.obj_history.size() - keep));
}

}  // namespace

// ---------------------------------------------------------------------------
// reset / step

EnvState reset(const EnvConfig& cfg, uint64_t seed) {
    cfg.validate();
    EnvState st;
    st.kind = cfg.kind;
    st.rng.seed(static_cast<uint32_t>(seed ^ (seed >> 32)));
    if (cfg.kind == EnvKind::Highway) {
        Entity ego;
        ego.present = true;
        ego.x = 0.0;
        int ego_lane = cfg.lanes / 2;
        ego.y = lane_center(cfg, ego_lane);
        ego.vx = (cfg.u_min + cfg.u_max) / 2.0;
        ego.vy = 0.0;
        st.entities.push_back(ego);
        st.ego_target_lane = ego_lane;

        // One speed per lane: same-lane traffic never collides with itself.
        std::vector<double> lane_speed(cfg.lanes);
        std::uniform_real_distribution<double> sp(cfg.u_min, cfg.u_min + (cfg.u_max - cfg.u_min) / 2.0);
        for (int l = 0; l < cfg.lanes; ++l) lane_speed[l] = sp(st.rng);

        std::uniform_int_distribution<int> lane_pick(0, cfg.lanes - 1);
        std::uniform_real_distribution<double> gap(0.0, 8.0);
        double x = 15.0 + gap(st.rng);
        for (int i = 1; i < cfg.vehicle_slots; ++i) {
            Entity pv;
            pv.present = true;
            int lane = lane_pick(st.rng);
            pv.x = x;
            pv.y = lane_center(cfg, lane);
            pv.vx = lane_speed[lane];
            pv.vy = 0.0;
            st.entities.push_back(pv);
            x += 12.0 + gap(st.rng);
        }
    } else {
        Entity agent, opp, ball;
        agent.present = opp.present = ball.present = true;
        agent.y = cfg.board / 2.0;
        agent.x = cfg.board - cfg.paddle_inset;
        opp.y = cfg.board / 2.0;
        opp.x = cfg.paddle_inset;
        ball.x = cfg.board / 2.0;
        ball.y = cfg.board / 2.0;
        st.entities = {agent, opp, ball};
        // serve the opening ball toward the agent
        double dir = 1.0;
        if (cfg.simple_bounce) {
            std::uniform_int_distribution<int> sign(0, 1);
            double s = cfg.ball_speed / std::sqrt(2.0);
            st.entities[2].vx = dir * s;
            st.entities[2].vy = (sign(st.rng) ? 1.0 : -1.0) * s;
        } else {
            std::uniform_real_distribution<double> frac(0.2, cfg.vy_frac);
            std::uniform_int_distribution<int> sign(0, 1);
            double vy = frac(st.rng) * cfg.ball_speed * (sign(st.rng) ? 1.0 : -1.0);
            st.entities[2].vy = vy;
            st.entities[2].vx = dir * std::sqrt(cfg.ball_speed * cfg.ball_speed - vy * vy);
        }
        for (int i = 0; i < cfg.history; ++i) push_obj_history(cfg, st);
    }
    return st;
}

namespace {

void relaunch_ball(const EnvConfig& cfg, EnvState& st, double dir) {
    Entity& ball = st.entities[2];
    ball.x = cfg.board / 2.0;
    ball.y = cfg.board / 2.0;
    if (cfg.simple_bounce) {
        std::uniform_int_distribution<int> sign(0, 1);
        double s = cfg.ball_speed / std::sqrt(2.0);
        ball.vx = dir * s;
        ball.vy = (sign(st.rng) ? 1.0 : -1.0) * s;
    } else {
        std::uniform_real_distribution<double> frac(0.2, cfg.vy_frac);
        std::uniform_int_distribution<int> sign(0, 1);
        double vy = frac(st.rng) * cfg.ball_speed * (sign(st.rng) ? 1.0 : -1.0);
        ball.vy = vy;
        ball.vx = dir * std::sqrt(cfg.ball_speed * cfg.ball_speed - vy * vy);
    }
}

// Advances the ball one tick with swept wall/paddle handling. A miss at a
// paddle plane is an immediate goal (the ball never travels behind a paddle).
// Returns +1 if the agent scored, -1 if the opponent scored, else 0.
int advance_ball(const EnvConfig& cfg, EnvState& st) {
    Entity& ball = st.entities[2];
    const double agent_face = (cfg.board - cfg.paddle_inset) - cfg.paddle_w / 2 - cfg.ball_r;
    const double opp_face = cfg.paddle_inset + cfg.paddle_w / 2 + cfg.ball_r;
    double remaining = 1.0;
    for (int guard = 0; guard < 8 && remaining > 1e-12; ++guard) {
        double t_best = remaining;
        int event = 0;  // 1 top wall, 2 bottom wall, 3 agent plane, 4 opponent plane
        if (ball.vy < 0) {
            double t = (cfg.ball_r - ball.y) / ball.vy;
            if (t >= 0 && t < t_best) { t_best = t; event = 1; }
        } else if (ball.vy > 0) {
            double t = (cfg.board - cfg.ball_r - ball.y) / ball.vy;
            if (t >= 0 && t < t_best) { t_best = t; event = 2; }
        }
        if (ball.vx > 0 && ball.x < agent_face) {
            double t = (agent_face - ball.x) / ball.vx;
            if (t >= 0 && t < t_best) { t_best = t; event = 3; }
        }
        if (ball.vx < 0 && ball.x > opp_face) {
            double t = (opp_face - ball.x) / ball.vx;
            if (t >= 0 && t < t_best) { t_best = t; event = 4; }
        }
        ball.x += ball.vx * t_best;
        ball.y += ball.vy * t_best;
        remaining -= t_best;
        switch (event) {
            case 0:
                remaining = 0;
                break;
            case 1:
            case 2:
                ball.vy = -ball.vy;
                break;
            case 3:
            case 4: {
                const Entity& paddle = st.entities[event == 3 ? 0 : 1];
                double reach = cfg.paddle_h / 2 + cfg.ball_r;
                if (std::abs(ball.y - paddle.y) <= reach) {
                    if (cfg.simple_bounce) {
                        ball.vx = -ball.vx;
                    } else {
                        double offset = std::clamp((ball.y - paddle.y) / reach, -1.0, 1.0);
                        double vy = offset * cfg.vy_frac * cfg.ball_speed;
                        double vx = std::sqrt(cfg.ball_speed * cfg.ball_speed - vy * vy);
                        ball.vy = vy;
                        ball.vx = event == 3 ? -vx : vx;
                    }
                } else if (event == 3) {
                    st.goals_opp += 1;
                    relaunch_ball(cfg, st, 1.0);
                    return -1;
                } else {
                    st.goals_agent += 1;
                    relaunch_ball(cfg, st, -1.0);
                    return 1;
                }
                break;
            }
        }
    }
    return 0;
}

bool rects_overlap(const Entity& a, const Entity& b, double len, double wid) {
    return std::abs(a.x - b.x) < len && std::abs(a.y - b.y) < wid;
}

}  // namespace

StepOut step_inplace(const EnvConfig& cfg, EnvState& st, int action) {
    if (st.done) throw std::invalid_argument("step on a done state");
    if (action < 0 || action >= cfg.action_count())
        throw std::invalid_argument("action " + std::to_string(action) + " out of range for " +
                                    env_kind_name(cfg.kind));
    StepOut out;
    if (cfg.kind == EnvKind::Highway) {
        Entity& ego = st.entities[0];
        switch (action) {
            case kLeft: st.ego_target_lane = std::max(0, st.ego_target_lane - 1); break;
            case kRight: st.ego_target_lane = std::min(cfg.lanes - 1, st.ego_target_lane + 1); break;
            case kFaster: ego.vx = std::min(ego.vx + cfg.speed_step, cfg.u_max); break;
            case kSlower: ego.vx = std::max(ego.vx - cfg.speed_step, cfg.u_min); break;
            default: break;
        }
        const double target_y = lane_center(cfg, st.ego_target_lane);
        for (int s = 0; s < cfg.substeps && !st.collided; ++s) {
            ego.vy = std::clamp((target_y - ego.y) / cfg.dt, -cfg.vy_max, cfg.vy_max);
            for (auto& e : st.entities) {
                if (!e.present) continue;
                e.x += e.vx * cfg.dt;
                e.y += e.vy * cfg.dt;
            }
            for (size_t i = 1; i < st.entities.size(); ++i) {
                if (st.entities[i].present &&
                    rects_overlap(ego, st.entities[i], cfg.vehicle_length, cfg.vehicle_width)) {
                    st.collided = true;
                    break;
                }
            }
        }
        out.reward = (ego.vx - cfg.u_min) / (cfg.u_max - cfg.u_min) - (st.collided ? cfg.beta : 0.0);
        st.tick += 1;
        st.done = st.collided || st.tick >= cfg.episode_len;
    } else {
        Entity& agent = st.entities[0];
        Entity& opp = st.entities[1];
        if (action == kUp) agent.y -= cfg.agent_speed;
        else if (action == kDown) agent.y += cfg.agent_speed;
        agent.y = std::clamp(agent.y, cfg.paddle_h / 2, cfg.board - cfg.paddle_h / 2);

        double gap = st.entities[2].y - opp.y;
        if (std::abs(gap) > cfg.opp_deadzone)
            opp.y += std::clamp(gap, -cfg.opp_speed, cfg.opp_speed);
        opp.y = std::clamp(opp.y, cfg.paddle_h / 2, cfg.board - cfg.paddle_h / 2);

        out.reward = advance_ball(cfg, st);
        st.tick += 1;
        st.done = (st.goals_agent + st.goals_opp >= cfg.goals_to_end) || st.tick >= cfg.episode_len;
        push_obj_history(cfg, st);
    }
    out.done = st.done;
    return out;
}

std::tuple<EnvState, double, bool> step(const EnvConfig& cfg, const EnvState& state, int action) {
    EnvState next = state;
    StepOut o = step_inplace(cfg, next, action);
    return {std::move(next), o.reward, o.done};
}

// ---------------------------------------------------------------------------
// observations

std::vector<float> RasterObs::frame(int f) const {
    std::vector<float> out(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[static_cast<size_t>(y) * w + x] = at(y, x, f);
    return out;
}

RasterObs observe_raster(const EnvConfig& cfg, const EnvState& state, FrameStack& history) {
    std::vector<float> current = render_current_frame(cfg, state);
    const int K = cfg.history;
    std::vector<const std::vector<float>*> frames;
    for (const auto& f : history.frames) frames.push_back(&f);
    frames.push_back(&current);
    // pad by repeating the oldest frame available
    std::vector<const std::vector<float>*> padded;
    for (int i = static_cast<int>(frames.size()); i < K; ++i) padded.push_back(frames.front());
    padded.insert(padded.end(), frames.begin(), frames.end());
    if (static_cast<int>(padded.size()) > K)
        padded.erase(padded.begin(), padded.begin() + (padded.size() - K));

    RasterObs obs;
    obs.h = cfg.raster_h;
    obs.w = cfg.raster_w;
    obs.k = K;
    obs.data.resize(static_cast<size_t>(obs.h) * obs.w * K);
    for (int f = 0; f < K; ++f) {
        const auto& src = *padded[f];
        for (int i = 0; i < obs.h * obs.w; ++i) obs.data[static_cast<size_t>(i) * K + f] = src[i];
    }
    history.frames.push_back(std::move(current));
    while (static_cast<int>(history.frames.size()) > K - 1 && !history.frames.empty())
        history.frames.pop_front();
    return obs;
}

std::vector<float> observe_objects(const EnvConfig& cfg, const EnvState& state) {
    std::vector<float> sigma(cfg.feature_dim(), 0.0f);
    if (cfg.kind == EnvKind::Highway) {
        const auto sc = hw_scales(cfg);
        HighwayView v = build_highway_view(cfg, state);
        sigma[0] = 0.0f;
        sigma[1] = static_cast<float>(v.ego_y / sc.dy);
        sigma[2] = static_cast<float>(v.ego_du / sc.v);
        sigma[3] = static_cast<float>(v.ego_vy / sc.vy);
        for (size_t i = 0; i < v.pvs.size(); ++i) {
            const auto& p = v.pvs[i];
            if (!p.present) continue;
            size_t o = (i + 1) * 4;
            sigma[o + 0] = static_cast<float>(p.dx / sc.dx);
            sigma[o + 1] = static_cast<float>(p.dy / sc.dy);
            sigma[o + 2] = static_cast<float>(p.dvx / sc.v);
            sigma[o + 3] = static_cast<float>(p.dvy / sc.vy);
        }
    } else {
        for (size_t i = 0; i < state.obj_history.size() && i < sigma.size(); ++i)
            sigma[i] = static_cast<float>(state.obj_history[i] / cfg.norm_scale);
    }
    return sigma;
}

namespace {

// Both the live raster and the object-list reconstruction render through the
// float32 feature values, so the two paths are bit-identical by construction.
HighwayView view_from_sigma(const EnvConfig& cfg, const std::vector<float>& sigma) {
    const auto sc = hw_scales(cfg);
    HighwayView v;
    v.ego_y = static_cast<double>(sigma[1]) * sc.dy;
    v.ego_du = static_cast<double>(sigma[2]) * sc.v;
    v.ego_vy = static_cast<double>(sigma[3]) * sc.vy;
    for (int slot = 1; slot < cfg.vehicle_slots; ++slot) {
        size_t o = static_cast<size_t>(slot) * 4;
        HwPv p;
        if (sigma[o] == 0.0f && sigma[o + 1] == 0.0f && sigma[o + 2] == 0.0f && sigma[o + 3] == 0.0f)
            continue;  // all-zero slot = absent
        p.present = true;
        p.dx = static_cast<double>(sigma[o + 0]) * sc.dx;
        p.dy = static_cast<double>(sigma[o + 1]) * sc.dy;
        p.dvx = static_cast<double>(sigma[o + 2]) * sc.v;
        p.dvy = static_cast<double>(sigma[o + 3]) * sc.vy;
        v.pvs.push_back(p);
    }
    return v;
}

std::vector<float> render_sigma_frame(const EnvConfig& cfg, const std::vector<float>& sigma,
                                      int frame_index) {
    if (cfg.kind == EnvKind::Highway) {
        double lookback = (cfg.history - 1 - frame_index) * cfg.action_dt();
        return render_highway_frame(cfg, view_from_sigma(cfg, sigma), lookback);
    }
    size_t o = static_cast<size_t>(frame_index) * 4;
    PongView v{static_cast<double>(sigma[o + 0]) * cfg.norm_scale,
               static_cast<double>(sigma[o + 1]) * cfg.norm_scale,
               static_cast<double>(sigma[o + 2]) * cfg.norm_scale,
               static_cast<double>(sigma[o + 3]) * cfg.norm_scale};
    return render_pong_frame(cfg, v);
}

std::vector<float> render_current_frame(const EnvConfig& cfg, const EnvState& st) {
    return render_sigma_frame(cfg, observe_objects(cfg, st), cfg.history - 1);
}

}  // namespace

std::vector<FeatureInfo> feature_info(const EnvConfig& cfg, const std::vector<float>& sigma) {
    if (static_cast<int>(sigma.size()) != cfg.feature_dim())
        throw std::invalid_argument("feature vector length does not match environment");
    std::vector<FeatureInfo> out;
    out.reserve(sigma.size());
    if (cfg.kind == EnvKind::Highway) {
        const auto sc = hw_scales(cfg);
        const double road = cfg.lanes * cfg.lane_width;
        const double half_w = cfg.vehicle_width / 2.0;
        const double ego_y = static_cast<double>(sigma[1]) * sc.dy;
        const double ego_u = cfg.u_min + static_cast<double>(sigma[2]) * sc.v;
        const double ego_vy = static_cast<double>(sigma[3]) * sc.vy;
        out.push_back({"ego.pad", 0.0, 0.0, true});
        out.push_back({"ego.y", half_w / sc.dy, (road - half_w) / sc.dy, true});
        out.push_back({"ego.u", 0.0, (cfg.u_max - cfg.u_min) / sc.v, true});
        out.push_back({"ego.vy", -cfg.vy_max / sc.vy, cfg.vy_max / sc.vy, true});
        for (int slot = 1; slot < cfg.vehicle_slots; ++slot) {
            std::string p = "pv" + std::to_string(slot);
            out.push_back({p + ".dx", -1.0, 1.0, false});
            out.push_back({p + ".dy", (half_w - ego_y) / sc.dy, (road - half_w - ego_y) / sc.dy, false});
            out.push_back({p + ".dvx", (cfg.u_min - ego_u) / sc.v, (cfg.u_max - ego_u) / sc.v, false});
            out.push_back({p + ".dvy", (-cfg.vy_max - ego_vy) / sc.vy, (cfg.vy_max - ego_vy) / sc.vy, false});
        }
    } else {
        const double ns = cfg.norm_scale;
        const double pad_lo = cfg.paddle_h / 2 / ns, pad_hi = (cfg.board - cfg.paddle_h / 2) / ns;
        // the ball lives between the two paddle planes
        const double face = cfg.paddle_inset + cfg.paddle_w / 2 + cfg.ball_r;
        for (int f = 0; f < cfg.history; ++f) {
            std::string p = "f" + std::to_string(f);
            out.push_back({p + ".agent_y", pad_lo, pad_hi, false});
            out.push_back({p + ".opp_y", pad_lo, pad_hi, false});
            out.push_back({p + ".ball_x", face / ns, (cfg.board - face) / ns, false});
            out.push_back({p + ".ball_y", cfg.ball_r / ns, (cfg.board - cfg.ball_r) / ns, false});
        }
    }
    return out;
}

RasterObs render_from_objects(const std::vector<float>& sigma, const EnvConfig& cfg) {
    if (static_cast<int>(sigma.size()) != cfg.feature_dim())
        throw std::invalid_argument("feature vector length does not match environment");
    const auto info = feature_info(cfg, sigma);
    constexpr double tol = 1e-9;
    for (size_t i = 0; i < sigma.size(); ++i) {
        bool slot_absent = false;
        if (cfg.kind == EnvKind::Highway && i >= 4) {
            size_t o = (i / 4) * 4;
            slot_absent = sigma[o] == 0.0f && sigma[o + 1] == 0.0f && sigma[o + 2] == 0.0f &&
                          sigma[o + 3] == 0.0f;
        }
        if (slot_absent) continue;
        if (sigma[i] < info[i].lo - tol || sigma[i] > info[i].hi + tol)
            throw InfeasibleState("feature " + info[i].name + "=" + std::to_string(sigma[i]) +
                                  " outside [" + std::to_string(info[i].lo) + ", " +
                                  std::to_string(info[i].hi) + "]");
    }

    RasterObs obs;
    obs.h = cfg.raster_h;
    obs.w = cfg.raster_w;
    obs.k = cfg.history;
    obs.data.resize(static_cast<size_t>(obs.h) * obs.w * obs.k);
    for (int f = 0; f < cfg.history; ++f) {
        std::vector<float> frame = render_sigma_frame(cfg, sigma, f);
        for (int i = 0; i < obs.h * obs.w; ++i) obs.data[static_cast<size_t>(i) * obs.k + f] = frame[i];
    }
    return obs;
}

// ---------------------------------------------------------------------------
// session

EnvSession::EnvSession(EnvConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) { reset(seed); }

void EnvSession::reset(uint64_t seed) {
    state_ = cfrl::reset(cfg_, seed);
    stack_.clear();
    raster_ = observe_raster(cfg_, state_, stack_);
}

StepOut EnvSession::step(int action) {
    StepOut out = step_inplace(cfg_, state_, action);
    raster_ = observe_raster(cfg_, state_, stack_);
    return out;
}

std::string trajectory_record(int tick, int action, double reward,
                              const std::vector<float>& objects, bool done) {
    nlohmann::json j;
    j["tick"] = tick;
    j["action"] = action;
    j["reward"] = reward;
    j["objects"] = objects;
    j["done"] = done;
    return j.dump();
}

}  // namespace cfrl
