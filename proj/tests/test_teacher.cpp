#include <doctest.h>

#include <random>

#include "cfrl/replay.hpp"
#include "cfrl/teacher.hpp"

using namespace cfrl;

namespace {

// One-step two-armed bandit with a constant 1x1x1 observation.
class BanditEnv final : public RolloutEnv {
public:
    explicit BanditEnv(std::vector<double> means) : means_(std::move(means)) {
        obs_.h = obs_.w = obs_.k = 1;
        obs_.data = {1.0f};
    }
    void reset(uint64_t seed) override { rng_.seed(static_cast<uint32_t>(seed)); }
    const RasterObs& raster() const override { return obs_; }
    StepOut step(int action) override {
        std::uniform_real_distribution<double> noise(-0.1, 0.1);
        return {means_.at(action) + noise(rng_), true};
    }
    int action_count() const override { return static_cast<int>(means_.size()); }
    std::array<int, 3> obs_shape() const override { return {1, 1, 1}; }

private:
    std::vector<double> means_;
    RasterObs obs_;
    std::mt19937 rng_;
};

// Reward 1 on every step, effectively infinite episodes.
class ConstRewardEnv final : public RolloutEnv {
public:
    ConstRewardEnv() {
        obs_.h = obs_.w = obs_.k = 1;
        obs_.data = {1.0f};
    }
    void reset(uint64_t) override {}
    const RasterObs& raster() const override { return obs_; }
    StepOut step(int) override { return {1.0, false}; }
    int action_count() const override { return 2; }
    std::array<int, 3> obs_shape() const override { return {1, 1, 1}; }

private:
    RasterObs obs_;
};

std::vector<LayerSpec> tiny_arch(int out) {
    return {LayerSpec::dense(16, true), LayerSpec::dense(out)};
}

}  // namespace

TEST_CASE("replay buffer keeps exactly the last capacity items in order") {
    ReplayBuffer<int> buf(5);
    for (int i = 0; i < 13; ++i) buf.push(i);
    CHECK(buf.size() == 5);
    CHECK(buf.total_pushed() == 13);
    CHECK(buf.ordered() == std::vector<int>{8, 9, 10, 11, 12});

    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        int v = buf.sample(rng);
        CHECK(v >= 8);
        CHECK(v <= 12);
    }
}

TEST_CASE("epsilon schedule is monotone non-increasing and clamps") {
    DqnHyper h;
    h.eps_start = 1.0;
    h.eps_end = 0.05;
    h.total_steps = 1000;
    double prev = epsilon_at(h, 0);
    for (int64_t s = 1; s <= 2000; s += 7) {
        double e = epsilon_at(h, s);
        CHECK(e <= prev + 1e-12);
        CHECK(e >= h.eps_end - 1e-12);
        prev = e;
    }
    CHECK(epsilon_at(h, 100000) == doctest::Approx(0.05));
}

TEST_CASE("dqn with gamma=0 learns bandit expectations") {
    BanditEnv env({0.3, 0.8});
    DqnHyper h;
    h.gamma = 0.0;
    h.total_steps = 4000;
    h.replay_capacity = 500;
    h.batch = 16;
    h.warmup = 100;
    h.target_sync = 100;
    h.lr = 3e-3;
    h.eps_start = 1.0;
    h.eps_end = 1.0;  // pure exploration; both arms sampled evenly
    h.arch = tiny_arch(2);
    TrainResult res = train_dqn_env(env, h, 99);
    RasterObs obs;
    obs.h = obs.w = obs.k = 1;
    obs.data = {1.0f};
    std::vector<float> q = res.model.soft_values(obs);
    CHECK(q[0] == doctest::Approx(0.3).epsilon(0.05 / 0.3));
    CHECK(q[1] == doctest::Approx(0.8).epsilon(0.05 / 0.8));
    CHECK(res.model.soft_values(obs) == q);  // purity
}

TEST_CASE("dqn training is reproducible") {
    DqnHyper h;
    h.gamma = 0.0;
    h.total_steps = 1200;
    h.replay_capacity = 200;
    h.batch = 8;
    h.warmup = 50;
    h.arch = tiny_arch(2);
    BanditEnv a({0.2, 0.5}), b({0.2, 0.5});
    TrainResult ra = train_dqn_env(a, h, 7);
    TrainResult rb = train_dqn_env(b, h, 7);
    CHECK(ra.model.net.params == rb.model.net.params);
}

TEST_CASE("target network changes only at sync steps") {
    BanditEnv env({0.1, 0.9});
    DqnHyper h;
    h.gamma = 0.0;
    h.total_steps = 400;
    h.replay_capacity = 100;
    h.batch = 8;
    h.warmup = 20;
    h.target_sync = 50;
    h.arch = tiny_arch(2);
    std::vector<float> last_target;
    std::vector<int64_t> change_steps;
    train_dqn_env(env, h, 3, nullptr,
                  [&](int64_t step, const Network&, const Network& target) {
                      if (!last_target.empty() && target.params != last_target)
                          change_steps.push_back(step);
                      last_target = target.params;
                  });
    CHECK(!change_steps.empty());
    for (int64_t s : change_steps) CHECK(s % h.target_sync == 0);
}

TEST_CASE("soft_action tags kinds and breaks ties toward action 0") {
    TeacherModel m;
    m.algo = Algo::DQN;
    m.actions = 3;
    m.net = Network::make({1, 1, 1}, tiny_arch(3), 1);
    std::fill(m.net.params.begin(), m.net.params.end(), 0.0f);
    RasterObs obs;
    obs.h = obs.w = obs.k = 1;
    obs.data = {1.0f};
    SoftAction sa = soft_action(m, obs);
    CHECK(sa.kind == SoftAction::Kind::QValues);
    CHECK(sa.values == std::vector<float>{0.0f, 0.0f, 0.0f});
    CHECK(sa.best() == 0);
    CHECK(m.greedy(obs) == argmax(m.soft_values(obs)));  // greedy = argmax of soft values

    TeacherModel a2c;
    a2c.algo = Algo::A2C;
    a2c.actions = 3;
    a2c.net = Network::make({1, 1, 1}, tiny_arch(4), 1);
    SoftAction sb = soft_action(a2c, obs);
    CHECK(sb.kind == SoftAction::Kind::Logits);
    CHECK(sb.values.size() == 3);  // value head removed
}

TEST_CASE("evaluate_policy aggregation matches a manual rollout") {
    EnvConfig c = EnvConfig::highway_defaults();
    auto ram_policy = [](const RasterObs&) { return kFaster; };
    EvalResult ev = evaluate_action_policy(ram_policy, c, 3, 2, 11);
    // independent rollout with the same seed derivation
    std::vector<double> expect_trials;
    for (int t = 0; t < 3; ++t) {
        double sum = 0;
        for (int e = 0; e < 2; ++e) {
            EnvSession s(c, derive_seed(11, t * 1000 + e));
            double total = 0;
            while (!s.done()) total += s.step(kFaster).reward;
            sum += total;
        }
        expect_trials.push_back(sum / 2);
    }
    REQUIRE(ev.per_trial.size() == expect_trials.size());
    for (size_t i = 0; i < expect_trials.size(); ++i)
        CHECK(ev.per_trial[i] == doctest::Approx(expect_trials[i]).epsilon(1e-12));

    EvalResult again = evaluate_action_policy(ram_policy, c, 3, 2, 11);
    CHECK(ev.per_trial == again.per_trial);  // zero variance across repeats
}

TEST_CASE("a colliding policy ends episodes with the collision penalty") {
    EnvConfig c = EnvConfig::highway_defaults();
    int collisions = 0;
    for (uint64_t seed = 11; seed < 19; ++seed) {
        EnvSession s(c, seed);
        double last_reward = 0;
        double sum = 0;
        while (!s.done()) {
            last_reward = s.step(kFaster).reward;  // full throttle, never evade
            sum += last_reward;
        }
        if (s.state().collided) {
            ++collisions;
            // Eq-shaped reward: final step = speed term - beta
            CHECK(last_reward <= 1.0 - c.beta);
            double speed_term = last_reward + c.beta;
            CHECK(speed_term >= 0.0);
            CHECK(speed_term <= 1.0);
            CHECK(sum < c.episode_len - c.beta + 1.0);
        }
    }
    CHECK(collisions >= 4);  // all-Faster crashes on most spawn layouts
}

TEST_CASE("random policy loses at pong") {
    EnvConfig p = EnvConfig::pong_defaults();
    EvalResult r = evaluate_random(p, 5, 1, 21);
    CHECK(r.mean_reward < 0.0);
}

TEST_CASE("entropy-dominated a2c stays near uniform") {
    EnvConfig p = EnvConfig::pong_defaults();
    A2cHyper h;
    h.total_steps = 1500;
    h.workers = 3;
    h.n_steps = 5;
    h.entropy_coef = 3.0;
    h.lr = 1e-3;
    TrainResult res = train_a2c(p, h, 5);
    EnvSession s(p, 123);
    for (int t = 0; t < 20; ++t) {
        std::vector<float> logits = res.model.soft_values(s.raster());
        std::vector<double> pi = softmax_t(logits, 1.0);
        CHECK(*std::max_element(pi.begin(), pi.end()) < 0.45);
        s.step(t % 3);
    }
}

TEST_CASE("a2c value head converges to the discounted constant-reward sum") {
    std::vector<std::unique_ptr<RolloutEnv>> envs;
    for (int i = 0; i < 4; ++i) envs.push_back(std::make_unique<ConstRewardEnv>());
    A2cHyper h;
    h.gamma = 0.9;
    h.total_steps = 60000;
    h.workers = 4;
    h.n_steps = 5;
    h.lr = 3e-3;
    h.entropy_coef = 0.01;
    h.arch = {LayerSpec::dense(16, true), LayerSpec::dense(3)};
    TrainResult res = train_a2c_env(envs, h, 17);
    RasterObs obs;
    obs.h = obs.w = obs.k = 1;
    obs.data = {1.0f};
    double v = res.model.state_value(obs);
    CHECK(v == doctest::Approx(1.0 / (1.0 - h.gamma)).epsilon(0.05));
}

TEST_CASE("hyperparameter validation") {
    DqnHyper d;
    d.gamma = 1.5;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    DqnHyper d2;
    d2.replay_capacity = 4;
    d2.batch = 32;
    CHECK_THROWS_AS(d2.validate(), ConfigError);
    A2cHyper a;
    a.workers = 0;
    CHECK_THROWS_AS(a.validate(), ConfigError);
}
