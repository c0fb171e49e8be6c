#pragma once

// Test-side inverse rasteriser for pong fixtures. With the integer-dynamics
// configuration below every entity centre sits on the pixel grid, so
// decode(render(sigma)) == sigma exactly and a synthetic raster-input teacher
// can be built as student(decode(raster)).

#include <cmath>
#include <stdexcept>

#include "cfrl/distill.hpp"

namespace cfrl::testutil {

// Integer dynamics: +-1 ball components, unit paddle steps, simple bounces.
// The even paddle height keeps the wall clamp on whole board units.
inline EnvConfig pong_integer_config() {
    EnvConfig c = EnvConfig::pong_defaults();
    c.simple_bounce = true;
    c.ball_speed = std::sqrt(2.0);
    c.agent_speed = 2.0;
    c.opp_speed = 1.0;
    c.paddle_h = 6.0;
    c.goals_to_end = 5;
    return c;
}

inline std::vector<float> decode_pong_raster(const RasterObs& obs, const EnvConfig& cfg) {
    if (cfg.raster_w != static_cast<int>(cfg.board) || cfg.raster_h != static_cast<int>(cfg.board))
        throw std::invalid_argument("decoder expects 1 px per board unit");
    const int paddle_px = static_cast<int>(std::lround(cfg.paddle_h));
    const int ball_px = static_cast<int>(std::lround(2 * cfg.ball_r));
    const int agent_col = static_cast<int>(std::lround(cfg.board - cfg.paddle_inset - cfg.paddle_w / 2));
    const int opp_col = static_cast<int>(std::lround(cfg.paddle_inset - cfg.paddle_w / 2));

    std::vector<float> sigma(static_cast<size_t>(cfg.history) * 4, 0.0f);
    for (int f = 0; f < cfg.history; ++f) {
        auto column_run = [&](int x, float value) {
            int y0 = -1, y1 = -1;
            for (int y = 0; y < obs.h; ++y) {
                if (obs.at(y, x, f) == value) {
                    if (y0 < 0) y0 = y;
                    y1 = y + 1;
                }
            }
            if (y0 < 0 || y1 - y0 != paddle_px)
                throw std::runtime_error("decoder: paddle run not found or wrong size");
            return y0;
        };
        const double pad_off = paddle_px % 2 == 0 ? paddle_px / 2.0 : (paddle_px - 1) / 2.0;
        double agent_y = column_run(agent_col, 1.0f) + pad_off;
        double opp_y = column_run(opp_col, 1.0f) + pad_off;

        int bx0 = -1, by0 = -1, bx1 = -1, by1 = -1;
        for (int y = 0; y < obs.h; ++y)
            for (int x = 0; x < obs.w; ++x)
                if (obs.at(y, x, f) == 0.8f) {
                    if (bx0 < 0 || x < bx0) bx0 = x;
                    if (by0 < 0 || y < by0) by0 = y;
                    if (x + 1 > bx1) bx1 = x + 1;
                    if (y + 1 > by1) by1 = y + 1;
                }
        if (bx0 < 0 || bx1 - bx0 != ball_px || by1 - by0 != ball_px)
            throw std::runtime_error("decoder: ball block not found or wrong size");
        double ball_x = bx0 + ball_px / 2.0;
        double ball_y = by0 + ball_px / 2.0;

        size_t o = static_cast<size_t>(f) * 4;
        sigma[o + 0] = static_cast<float>(agent_y / cfg.norm_scale);
        sigma[o + 1] = static_cast<float>(opp_y / cfg.norm_scale);
        sigma[o + 2] = static_cast<float>(ball_x / cfg.norm_scale);
        sigma[o + 3] = static_cast<float>(ball_y / cfg.norm_scale);
    }
    return sigma;
}

// Teacher fixture for Eq-style validation semantics and synthetic fidelity:
// reads the raster, decodes it back to the object list, applies the student.
struct DecodingTeacher final : RasterPolicy {
    const StudentModel& student;
    EnvConfig cfg;

    DecodingTeacher(const StudentModel& s, EnvConfig c) : student(s), cfg(std::move(c)) {}
    std::vector<float> soft_values(const RasterObs& s) const override {
        return student.values(decode_pong_raster(s, cfg));
    }
    int action_count() const override { return student.actions; }
};

struct ConstantTeacher final : RasterPolicy {
    int actions;
    int fixed;
    explicit ConstantTeacher(int action_count, int fixed_action = 0)
        : actions(action_count), fixed(fixed_action) {}
    std::vector<float> soft_values(const RasterObs&) const override {
        std::vector<float> v(actions, 0.0f);
        v[fixed] = 1.0f;
        return v;
    }
    int action_count() const override { return actions; }
};

}  // namespace cfrl::testutil
