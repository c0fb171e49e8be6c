#include <doctest.h>

#include <cmath>

#include "cfrl/cf.hpp"
#include "pong_decode.hpp"

using namespace cfrl;
using namespace cfrl::testutil;

namespace {

// Student with a single dense layer: scores = W sigma + b.
StudentModel linear_student(const std::vector<std::vector<double>>& W, const std::vector<double>& b,
                            EnvKind env = EnvKind::Highway) {
    const int A = static_cast<int>(W.size());
    const int F = static_cast<int>(W[0].size());
    StudentModel s;
    s.actions = A;
    s.env = env;
    s.net = Network::make({F}, {LayerSpec::dense(A)}, 1);
    for (int i = 0; i < F; ++i)
        for (int j = 0; j < A; ++j) s.net.params[i * A + j] = static_cast<float>(W[j][i]);
    for (int j = 0; j < A; ++j) s.net.params[F * A + j] = static_cast<float>(b[j]);
    return s;
}

CFConfig open_box_config(int features) {
    CFConfig cfg;
    cfg.features.resize(features);
    for (int i = 0; i < features; ++i)
        cfg.features[i] = {"f" + std::to_string(i), -100.0, 100.0, false};
    return cfg;
}

}  // namespace

TEST_CASE("cf_loss values") {
    StudentModel s = linear_student({{1.0, 0.0}, {0.0, 1.0}}, {0.0, 0.0});
    std::vector<float> sigma = {2.0f, 0.0f};

    SUBCASE("distance term vanishes at the original state") {
        double p = softmax_t(s.values(sigma), 1.0)[1];
        double expected = 3.0 * (p - 1.0) * (p - 1.0);
        CHECK(cf_loss(s.net, sigma, 3.0, sigma, 1) == doctest::Approx(expected).epsilon(1e-9));
    }
    SUBCASE("hand evaluation on a fixed counterfactual") {
        std::vector<float> cf = {1.0f, 0.5f};
        // logits (1, 0.5); p_target = e^{0.5}/(e^1 + e^{0.5})
        double p = std::exp(0.5) / (std::exp(1.0) + std::exp(0.5));
        double dist = std::sqrt(1.0 + 0.25);
        CHECK(cf_loss(s.net, cf, 2.0, sigma, 1) ==
              doctest::Approx(2.0 * (p - 1) * (p - 1) + dist).epsilon(1e-9));
    }
    SUBCASE("invalid lambda") {
        CHECK_THROWS_AS(cf_loss(s.net, sigma, 0.0, sigma, 1), std::invalid_argument);
    }
}

TEST_CASE("project_feasible clamps, freezes and is idempotent") {
    CFConfig cfg = open_box_config(3);
    cfg.features[0].lo = -0.5;
    cfg.features[0].hi = 0.5;
    cfg.features[2].frozen = true;
    std::vector<float> original = {0.0f, 0.2f, 0.7f};

    std::vector<float> in_bounds = {0.3f, 0.1f, 0.7f};
    CHECK(project_feasible(in_bounds, cfg, original) == in_bounds);

    std::vector<float> out = project_feasible({2.0f, 0.1f, 0.9f}, cfg, original);
    CHECK(out[0] == 0.5f);
    CHECK(out[2] == 0.7f);  // frozen feature restored
    CHECK(project_feasible(out, cfg, original) == out);

    SUBCASE("grid snapping stays idempotent") {
        cfg.quant_grid = 1.0 / 64.0;
        std::vector<float> snapped = project_feasible({0.123f, 0.01f, 0.0f}, cfg, original);
        CHECK(project_feasible(snapped, cfg, original) == snapped);
        for (int i = 0; i < 2; ++i) {
            double cells = snapped[i] * 64.0;
            CHECK(cells == doctest::Approx(std::round(cells)).epsilon(1e-9));
        }
    }
}

TEST_CASE("generate_cf reaches the analytic boundary on a linear student") {
    // w = (1,-1): action 0 wins when x0 > x1. From (1,0) the closest flip
    // point is the projection onto the diagonal, (0.5, 0.5).
    StudentModel s = linear_student({{1.0, -1.0}, {-1.0, 1.0}}, {0.0, 0.0});
    std::vector<float> sigma = {1.0f, 0.0f};
    CFConfig cfg = open_box_config(2);
    CFResult r = generate_cf(s, sigma, 1, cfg);
    REQUIRE(r.converged);
    CHECK(argmax(s.values(r.sigma_cf)) == 1);
    double d0 = r.sigma_cf[0] - 0.5, d1 = r.sigma_cf[1] - 0.5;
    CHECK(std::sqrt(d0 * d0 + d1 * d1) < 0.05);
    CHECK(r.dist == doctest::Approx(std::sqrt(0.5)).epsilon(0.05));
}

TEST_CASE("generate_cf distance tracks the closed-form margin over random hyperplanes") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1, 1);
    int checked = 0;
    for (int trial = 0; trial < 30 && checked < 12; ++trial) {
        int F = 2 + static_cast<int>(trial % 3);
        std::vector<double> w0(F), w1(F), b = {u(rng), u(rng)};
        for (auto& v : w0) v = u(rng);
        for (auto& v : w1) v = u(rng);
        std::vector<float> sigma(F);
        for (auto& v : sigma) v = static_cast<float>(u(rng));
        StudentModel s = linear_student({w0, w1}, b);
        int a = s.greedy(sigma);
        int target = 1 - a;
        // margin / ||dw|| is the exact distance to the decision boundary
        double margin = b[a] - b[target];
        double dw_norm2 = 0;
        for (int i = 0; i < F; ++i) {
            margin += (w0[i] - w1[i]) * sigma[i] * (a == 0 ? 1.0 : -1.0);
            double dw = w0[i] - w1[i];
            dw_norm2 += dw * dw;
        }
        double oracle = std::abs(margin) / std::sqrt(dw_norm2);
        if (oracle < 0.05 || oracle > 3.0) continue;  // keep well-conditioned cases
        CFResult r = generate_cf(s, sigma, target, open_box_config(F));
        REQUIRE(r.converged);
        CHECK(r.dist >= oracle - 1e-6);
        CHECK(r.dist <= oracle * 1.05);
        ++checked;
    }
    CHECK(checked >= 10);
}

TEST_CASE("generate_cf argument validation") {
    StudentModel s = linear_student({{1.0, 0.0}, {0.0, 1.0}}, {0.0, 0.0});
    std::vector<float> sigma = {1.0f, 0.0f};  // argmax 0
    CFConfig cfg = open_box_config(2);
    CHECK_THROWS_AS(generate_cf(s, sigma, 0, cfg), std::invalid_argument);  // already there
    CHECK_THROWS_AS(generate_cf(s, sigma, 5, cfg), std::invalid_argument);
    CFConfig frozen = cfg;
    frozen.features[0].frozen = frozen.features[1].frozen = true;
    CHECK_THROWS_AS(generate_cf(s, sigma, 1, frozen), std::invalid_argument);
}

TEST_CASE("returned counterfactuals respect bounds and the frozen mask exactly") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    for (int trial = 0; trial < 10; ++trial) {
        StudentModel s;
        s.actions = 3;
        s.env = EnvKind::Highway;
        s.net = Network::make({4}, student_arch(16, 3), rng());
        std::vector<float> sigma(4);
        for (auto& v : sigma) v = static_cast<float>(u(rng));
        CFConfig cfg = open_box_config(4);
        for (auto& f : cfg.features) { f.lo = -0.9; f.hi = 0.9; }
        cfg.features[0].frozen = true;
        int a = s.greedy(sigma);
        int target = (a + 1) % 3;
        CFResult r = generate_cf(s, sigma, target, cfg);
        CHECK(r.sigma_cf[0] == sigma[0]);
        for (float v : r.sigma_cf) {
            CHECK(v >= -0.9f);
            CHECK(v <= 0.9f);
        }
        if (r.converged) CHECK(argmax(s.values(r.sigma_cf)) == target);
        if (r.dist == 0.0) CHECK(r.sigma_cf == r.sigma);
        if (r.sigma_cf == r.sigma) CHECK(r.dist == 0.0);
    }
}

TEST_CASE("highway faster->left counterfactual pulls the lead vehicle closer") {
    // hand-built policy over (lead dx, lead dvx): far lead -> Faster, near -> Left
    EnvConfig c = EnvConfig::highway_defaults();
    const int F = c.feature_dim();
    std::vector<std::vector<double>> W(5, std::vector<double>(F, 0.0));
    std::vector<double> b(5, 0.0);
    W[kFaster][4] = 4.0;   // lead dx drives Faster
    W[kLeft][4] = -4.0;    // near lead drives Left
    b[kLeft] = 1.6;        // crossover at dx = 0.2 (12.8 m)
    StudentModel s = linear_student({W[0], W[1], W[2], W[3], W[4]}, b, EnvKind::Highway);

    EnvState st = reset(c, 2);
    std::vector<float> sigma = observe_objects(c, st);
    REQUIRE(sigma[4] > 0.25f);  // lead well ahead: student says Faster
    REQUIRE(s.greedy(sigma) == kFaster);
    CFConfig cfg;
    cfg.features = feature_info(c, sigma);
    CFResult r = generate_cf(s, sigma, kLeft, cfg);
    REQUIRE(r.converged);
    CHECK(r.sigma_cf[4] < sigma[4]);  // the front vehicle moved toward the ego
}

TEST_CASE("validate_cf implements the validity equation") {
    EnvConfig c = pong_integer_config();
    StudentModel student;
    student.actions = c.action_count();
    student.env = EnvKind::Pong;
    student.net = Network::make({c.feature_dim()}, student_arch(32, 3), 5);

    EnvSession session(c, 9);
    for (int i = 0; i < 4; ++i) session.step(i % 3);
    std::vector<float> sigma = session.objects();

    SUBCASE("identical counterfactual is invalid (teacher action unchanged)") {
        DecodingTeacher teacher(student, c);
        CFResult r;
        r.sigma = sigma;
        r.sigma_cf = sigma;
        r.target_action = (student.greedy(sigma) + 1) % 3;
        CHECK(validate_cf(teacher, student, r, c) == 0);
        CHECK(r.teacher_action_orig == r.teacher_action_cf);
    }
    SUBCASE("decoding teacher validates every converged counterfactual") {
        DecodingTeacher teacher(student, c);
        CFConfig cfg;
        cfg.features = feature_info(c, sigma);
        // grid projection keeps candidates exactly decodable
        cfg.quant_grid = 1.0 / c.norm_scale;
        int flipped = 0;
        for (int target = 0; target < 3; ++target) {
            if (target == student.greedy(sigma)) continue;
            CFResult r = generate_cf(student, sigma, target, cfg);
            if (!r.converged) continue;
            ++flipped;
            CHECK(validate_cf(teacher, student, r, c) == 1);
        }
        CHECK(flipped >= 1);
    }
    SUBCASE("constant teacher never validates") {
        ConstantTeacher teacher(3, 0);
        CFResult r;
        r.sigma = sigma;
        r.sigma_cf = sigma;
        r.sigma_cf[2] += 0.05f;
        r.target_action = 1;
        CHECK(validate_cf(teacher, student, r, c) == 0);
    }
    SUBCASE("infeasible candidates report validity 0 with a reason") {
        DecodingTeacher teacher(student, c);
        CFResult r;
        r.sigma = sigma;
        r.sigma_cf = sigma;
        r.sigma_cf[0] = 0.99f;  // paddle far outside the board
        r.target_action = 1;
        CHECK(validate_cf(teacher, student, r, c) == 0);
        CHECK_FALSE(r.rendered);
        CHECK(r.status.find("infeasible") != std::string::npos);
    }
}

TEST_CASE("run_batch maps queries and aggregates") {
    EnvConfig c = pong_integer_config();
    StudentModel student;
    student.actions = 3;
    student.env = EnvKind::Pong;
    student.net = Network::make({c.feature_dim()}, student_arch(32, 3), 6);
    DecodingTeacher teacher(student, c);
    CFConfig cfg;
    cfg.quant_grid = 1.0 / c.norm_scale;

    SUBCASE("empty batch") {
        BatchSummary sum;
        auto results = run_batch({}, teacher, student, c, cfg, &sum);
        CHECK(results.empty());
        CHECK(sum.n == 0);
        CHECK(sum.validity_pct == 0.0);
    }
    SUBCASE("identical queries give identical results; summary equals the mean") {
        EnvSession session(c, 12);
        for (int i = 0; i < 6; ++i) session.step(i % 3);
        std::vector<float> sigma = session.objects();
        int target = (student.greedy(sigma) + 1) % 3;
        std::vector<CFQuery> queries(4, CFQuery{sigma, target});
        BatchSummary sum;
        auto results = run_batch(queries, teacher, student, c, cfg, &sum);
        REQUIRE(results.size() == 4);
        for (size_t i = 1; i < results.size(); ++i) {
            CHECK(results[i].sigma_cf == results[0].sigma_cf);
            CHECK(results[i].validity == results[0].validity);
        }
        double mean = 0;
        for (const auto& r : results) mean += r.validity;
        CHECK(sum.validity_pct == doctest::Approx(100.0 * mean / 4));
    }
    SUBCASE("per-query errors are contained") {
        EnvSession session(c, 12);
        std::vector<float> sigma = session.objects();
        std::vector<CFQuery> queries = {
            {sigma, student.greedy(sigma)},              // invalid target
            {sigma, (student.greedy(sigma) + 1) % 3},    // fine
        };
        BatchSummary sum;
        auto results = run_batch(queries, teacher, student, c, cfg, &sum);
        REQUIRE(results.size() == 2);
        CHECK(results[0].status.find("error") != std::string::npos);
        CHECK(results[1].status.substr(0, 2) == "ok");
    }
}

TEST_CASE("cf results serialise through json lines") {
    CFResult r;
    r.sigma = {0.1f, 0.2f};
    r.sigma_cf = {0.11f, 0.19f};
    r.original_action = 0;
    r.target_action = 2;
    r.converged = true;
    r.iterations = 42;
    r.dist = 0.014142;
    r.validity = 1;
    r.rendered = true;
    r.teacher_action_orig = 0;
    r.teacher_action_cf = 2;
    r.student_action_cf = 2;
    CFResult back = cf_result_from_json(cf_result_to_json(r));
    CHECK(back.sigma == r.sigma);
    CHECK(back.sigma_cf == r.sigma_cf);
    CHECK(back.validity == r.validity);
    CHECK(back.dist == doctest::Approx(r.dist));
    CHECK(back.converged == r.converged);
}
