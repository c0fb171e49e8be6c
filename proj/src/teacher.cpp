#include "cfrl/teacher.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "cfrl/replay.hpp"

namespace cfrl {

std::string algo_name(Algo a) { return a == Algo::DQN ? "dqn" : "a2c"; }

Algo algo_from(const std::string& name) {
    if (name == "dqn") return Algo::DQN;
    if (name == "a2c") return Algo::A2C;
    throw ConfigError("unknown algorithm: " + name + " (expected dqn or a2c)");
}

std::vector<float> TeacherModel::soft_values(const RasterObs& s) const {
    std::vector<float> out = net.forward(s.data);
    if (algo == Algo::A2C) out.resize(actions);  // drop the value head
    return out;
}

double TeacherModel::state_value(const RasterObs& s) const {
    if (algo != Algo::A2C) throw std::logic_error("state_value is only defined for a2c teachers");
    std::vector<float> out = net.forward(s.data);
    return out.back();
}

SoftAction soft_action(const TeacherModel& model, const RasterObs& s) {
    SoftAction a;
    a.values = model.soft_values(s);
    a.kind = model.algo == Algo::DQN ? SoftAction::Kind::QValues : SoftAction::Kind::Logits;
    return a;
}

std::vector<LayerSpec> teacher_arch(int h, int w, int outputs) {
    std::vector<LayerSpec> arch;
    const bool paper_scale = std::min(h, w) >= 64;
    struct Conv { int f, k, s; };
    std::vector<Conv> stack = paper_scale
                                  ? std::vector<Conv>{{4, 8, 4}, {32, 4, 2}, {64, 3, 1}}
                                  : std::vector<Conv>{{8, 8, 4}, {16, 4, 2}, {32, 3, 1}};
    int ch = h, cw = w;
    for (const auto& c : stack) {
        if (ch < c.k || cw < c.k) break;
        arch.push_back(LayerSpec::conv(c.f, c.k, c.s));
        ch = (ch - c.k) / c.s + 1;
        cw = (cw - c.k) / c.s + 1;
    }
    arch.push_back(LayerSpec::dense(paper_scale ? 512 : 128, true));
    arch.push_back(LayerSpec::dense(outputs));
    return arch;
}

std::vector<LayerSpec> student_arch(int hidden, int outputs) {
    return {LayerSpec::dense(hidden, true), LayerSpec::dense(hidden, true),
            LayerSpec::dense(outputs)};
}

// ---------------------------------------------------------------------------
// hyperparameters

DqnHyper DqnHyper::from_kv(const KeyValueConfig& kv) {
    DqnHyper h;
    h.gamma = kv.get_double("dqn.gamma", h.gamma);
    h.replay_capacity = static_cast<int>(kv.get_int("dqn.replay_capacity", h.replay_capacity));
    h.batch = static_cast<int>(kv.get_int("dqn.batch", h.batch));
    h.target_sync = static_cast<int>(kv.get_int("dqn.target_sync", h.target_sync));
    h.eps_start = kv.get_double("dqn.eps_start", h.eps_start);
    h.eps_end = kv.get_double("dqn.eps_end", h.eps_end);
    h.eps_decay_steps = static_cast<int>(kv.get_int("dqn.eps_decay_steps", h.eps_decay_steps));
    h.total_steps = static_cast<int>(kv.get_int("dqn.total_steps", h.total_steps));
    h.lr = kv.get_double("dqn.lr", h.lr);
    h.warmup = static_cast<int>(kv.get_int("dqn.warmup", h.warmup));
    h.train_every = static_cast<int>(kv.get_int("dqn.train_every", h.train_every));
    h.validate();
    return h;
}

void DqnHyper::validate() const {
    if (gamma < 0 || gamma > 1) throw ConfigError("dqn.gamma must be in [0,1]");
    if (replay_capacity < batch) throw ConfigError("dqn.replay_capacity must be >= dqn.batch");
    if (batch < 1 || total_steps < 1 || target_sync < 1 || train_every < 1)
        throw ConfigError("dqn counters must be positive");
    if (eps_start < eps_end) throw ConfigError("dqn.eps_start must be >= dqn.eps_end");
    if (lr <= 0) throw ConfigError("dqn.lr must be positive");
}

uint64_t DqnHyper::digest() const {
    std::ostringstream s;
    s << gamma << ' ' << replay_capacity << ' ' << batch << ' ' << target_sync << ' ' << eps_start
      << ' ' << eps_end << ' ' << eps_decay_steps << ' ' << total_steps << ' ' << lr << ' '
      << warmup << ' ' << train_every;
    return fnv1a64(s.str());
}

A2cHyper A2cHyper::from_kv(const KeyValueConfig& kv) {
    A2cHyper h;
    h.gamma = kv.get_double("a2c.gamma", h.gamma);
    h.n_steps = static_cast<int>(kv.get_int("a2c.n_steps", h.n_steps));
    h.workers = static_cast<int>(kv.get_int("a2c.workers", h.workers));
    h.lr = kv.get_double("a2c.lr", h.lr);
    h.value_coef = kv.get_double("a2c.value_coef", h.value_coef);
    h.entropy_coef = kv.get_double("a2c.entropy_coef", h.entropy_coef);
    h.total_steps = static_cast<int>(kv.get_int("a2c.total_steps", h.total_steps));
    h.validate();
    return h;
}

void A2cHyper::validate() const {
    if (gamma < 0 || gamma > 1) throw ConfigError("a2c.gamma must be in [0,1]");
    if (n_steps < 1 || workers < 1 || total_steps < 1)
        throw ConfigError("a2c counters must be positive");
    if (lr <= 0) throw ConfigError("a2c.lr must be positive");
}

uint64_t A2cHyper::digest() const {
    std::ostringstream s;
    s << gamma << ' ' << n_steps << ' ' << workers << ' ' << lr << ' ' << value_coef << ' '
      << entropy_coef << ' ' << total_steps;
    return fnv1a64(s.str());
}

double epsilon_at(const DqnHyper& h, int64_t step) {
    int64_t decay = h.eps_decay_steps > 0 ? h.eps_decay_steps
                                          : static_cast<int64_t>(h.total_steps * 6 / 10);
    if (decay <= 0) return h.eps_end;
    double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(decay));
    return h.eps_start + (h.eps_end - h.eps_start) * frac;
}

// ---------------------------------------------------------------------------
// DQN

namespace {

void log_entry(std::ostream* out, const TrainLogEntry& e) {
    if (!out) return;
    nlohmann::json j;
    j["step"] = e.step;
    j["episode_reward"] = e.episode_reward;
    j["loss"] = e.loss;
    j["epsilon"] = e.epsilon;
    (*out) << j.dump() << "\n";
}

// Stacked observations quantised to bytes, one frame per step. Transitions
// reference frame indices; stacks are rebuilt on sampling with episode-start
// padding exactly as the live FrameStack pads.
class FrameStore {
public:
    FrameStore(int h, int w, int k, size_t capacity_frames)
        : h_(h), w_(w), k_(k), cap_(capacity_frames), frames_(capacity_frames),
          episode_(capacity_frames, -1) {}

    int64_t push(const RasterObs& stacked, int64_t episode) {
        std::vector<uint8_t>& slot = frames_[next_ % cap_];
        slot.resize(static_cast<size_t>(h_) * w_);
        for (int i = 0; i < h_ * w_; ++i) {
            float v = stacked.data[static_cast<size_t>(i) * k_ + (k_ - 1)];
            slot[i] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
        episode_[next_ % cap_] = episode;
        return next_++;
    }

    // Writes the K-frame stack ending at `idx` into `dst` (h*w*k floats).
    void stack_into(int64_t idx, float* dst) const {
        for (int f = 0; f < k_; ++f) {
            int64_t j = idx - (k_ - 1 - f);
            if (j < 0 || episode_[j % cap_] != episode_[idx % cap_]) j = first_of_episode(idx);
            const auto& fr = frames_[j % cap_];
            for (int i = 0; i < h_ * w_; ++i)
                dst[static_cast<size_t>(i) * k_ + f] = static_cast<float>(fr[i]) / 255.0f;
        }
    }

private:
    int64_t first_of_episode(int64_t idx) const {
        int64_t j = idx;
        while (j > 0 && j > idx - k_ + 1 && episode_[(j - 1) % cap_] == episode_[idx % cap_]) --j;
        return j;
    }

    int h_, w_, k_;
    size_t cap_;
    int64_t next_ = 0;
    std::vector<std::vector<uint8_t>> frames_;
    std::vector<int64_t> episode_;
};

struct DqnTransition {
    int64_t s = 0, s2 = 0;
    uint8_t action = 0;
    float reward = 0;
    bool done = false;
};

double huber(double e) { return std::abs(e) <= 1.0 ? 0.5 * e * e : std::abs(e) - 0.5; }
double huber_grad(double e) { return std::clamp(e, -1.0, 1.0); }

}  // namespace

TrainResult train_dqn(const EnvConfig& env_cfg, const DqnHyper& hyper, uint64_t seed,
                      std::ostream* log_stream) {
    SessionEnv env(env_cfg, derive_seed(seed, 1));
    TrainResult res = train_dqn_env(env, hyper, seed, log_stream);
    res.model.env = env_cfg.kind;
    return res;
}

TrainResult train_dqn_env(RolloutEnv& env, const DqnHyper& hyper, uint64_t seed,
                          std::ostream* log_stream, const StepProbe& probe) {
    hyper.validate();
    const auto [h, w, k] = env.obs_shape();
    const int actions = env.action_count();
    std::vector<LayerSpec> arch = hyper.arch.empty() ? teacher_arch(h, w, actions) : hyper.arch;

    TrainResult res;
    res.model.algo = Algo::DQN;
    res.model.actions = actions;
    res.model.seed = seed;
    res.model.net = Network::make({h, w, k}, arch, derive_seed(seed, 2));
    Network& net = res.model.net;
    Network target = net;

    AdamState adam;
    adam.lr = hyper.lr;
    std::mt19937_64 act_rng(derive_seed(seed, 3));
    std::mt19937_64 sample_rng(derive_seed(seed, 4));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any_action(0, actions - 1);

    // Two frames can be pushed per transition (episode resets add one), so the
    // frame ring is twice the transition capacity plus stacking margin.
    FrameStore frames(h, w, k, 2 * static_cast<size_t>(hyper.replay_capacity) + k + 4);
    ReplayBuffer<DqnTransition> replay(static_cast<size_t>(hyper.replay_capacity));

    int64_t episode = 0;
    env.reset(derive_seed(seed, 100 + episode));
    int64_t s_idx = frames.push(env.raster(), episode);
    double episode_reward = 0.0;
    double last_loss = 0.0;

    Tensor batch_s({hyper.batch, h, w, k});
    Tensor batch_s2({hyper.batch, h, w, k});
    Workspace ws_online, ws_target;
    std::vector<float> grad;

    for (int64_t step = 1; step <= hyper.total_steps; ++step) {
        double eps = epsilon_at(hyper, step);
        int a;
        if (step <= hyper.warmup || unit(act_rng) < eps) {
            a = any_action(act_rng);
        } else {
            Tensor one({1, h, w, k});
            frames.stack_into(s_idx, one.ptr());
            a = argmax(net.forward_batch(one).data);
        }
        StepOut out = env.step(a);
        episode_reward += out.reward;
        int64_t s2_idx = frames.push(env.raster(), episode);
        replay.push({s_idx, s2_idx, static_cast<uint8_t>(a), static_cast<float>(out.reward),
                     out.done});
        if (out.done) {
            res.log.push_back({step, episode_reward, last_loss, eps});
            log_entry(log_stream, res.log.back());
            ++episode;
            env.reset(derive_seed(seed, 100 + episode));
            s_idx = frames.push(env.raster(), episode);
            episode_reward = 0.0;
        } else {
            s_idx = s2_idx;
        }

        if (step > hyper.warmup && step % hyper.train_every == 0 &&
            replay.size() >= static_cast<size_t>(hyper.batch)) {
            std::vector<DqnTransition> batch;
            batch.reserve(hyper.batch);
            for (int b = 0; b < hyper.batch; ++b) batch.push_back(replay.sample(sample_rng));
            for (int b = 0; b < hyper.batch; ++b) {
                frames.stack_into(batch[b].s, batch_s.ptr() + static_cast<int64_t>(b) * h * w * k);
                frames.stack_into(batch[b].s2, batch_s2.ptr() + static_cast<int64_t>(b) * h * w * k);
            }
            Tensor q2 = target.forward_batch(batch_s2, ws_target);
            Tensor q = net.forward_batch(batch_s, ws_online);
            Tensor upstream({hyper.batch, actions});
            double loss = 0.0;
            for (int b = 0; b < hyper.batch; ++b) {
                double best_next = q2.data[static_cast<size_t>(b) * actions];
                for (int j = 1; j < actions; ++j)
                    best_next = std::max(best_next, (double)q2.data[static_cast<size_t>(b) * actions + j]);
                double y = batch[b].reward +
                           hyper.gamma * (batch[b].done ? 0.0 : 1.0) * best_next;
                double e = q.data[static_cast<size_t>(b) * actions + batch[b].action] - y;
                loss += huber(e);
                upstream.data[static_cast<size_t>(b) * actions + batch[b].action] =
                    static_cast<float>(huber_grad(e) / hyper.batch);
            }
            loss /= hyper.batch;
            if (!std::isfinite(loss))
                throw std::runtime_error("dqn training diverged: non-finite loss at step " +
                                         std::to_string(step));
            net.backward(ws_online, upstream, &grad, nullptr);
            adam.step(net.params, grad);
            last_loss = loss;
        }
        if (step % hyper.target_sync == 0) target.params = net.params;
        if (probe) probe(step, net, target);
    }
    res.model.train_steps = hyper.total_steps;
    res.model.final_epsilon = epsilon_at(hyper, hyper.total_steps);
    return res;
}

// ---------------------------------------------------------------------------
// A2C

TrainResult train_a2c(const EnvConfig& env_cfg, const A2cHyper& hyper, uint64_t seed,
                      std::ostream* log_stream) {
    std::vector<std::unique_ptr<RolloutEnv>> envs;
    for (int i = 0; i < hyper.workers; ++i)
        envs.push_back(std::make_unique<SessionEnv>(env_cfg, derive_seed(seed, 50 + i)));
    TrainResult res = train_a2c_env(envs, hyper, seed, log_stream);
    res.model.env = env_cfg.kind;
    return res;
}

TrainResult train_a2c_env(std::vector<std::unique_ptr<RolloutEnv>>& envs, const A2cHyper& hyper,
                          uint64_t seed, std::ostream* log_stream) {
    hyper.validate();
    if (envs.empty()) throw std::invalid_argument("a2c needs at least one environment");
    const auto [h, w, k] = envs[0]->obs_shape();
    const int actions = envs[0]->action_count();
    const int W = static_cast<int>(envs.size());
    const int N = hyper.n_steps;

    std::vector<LayerSpec> arch = hyper.arch.empty() ? teacher_arch(h, w, actions + 1) : hyper.arch;
    TrainResult res;
    res.model.algo = Algo::A2C;
    res.model.actions = actions;
    res.model.seed = seed;
    res.model.net = Network::make({h, w, k}, arch, derive_seed(seed, 2));
    Network& net = res.model.net;
    if (net.output_dim() != actions + 1)
        throw std::invalid_argument("a2c architecture must emit |A|+1 outputs");

    AdamState adam;
    adam.lr = hyper.lr;
    std::mt19937_64 rng(derive_seed(seed, 3));

    std::vector<double> episode_reward(W, 0.0);
    const int64_t obs_len = static_cast<int64_t>(h) * w * k;
    Tensor roll_obs({W * N, h, w, k});
    std::vector<int> roll_action(W * N);
    std::vector<float> roll_reward(W * N);
    std::vector<uint8_t> roll_done(W * N);
    Tensor boot_obs({W, h, w, k});
    Workspace ws, ws_boot;
    std::vector<float> grad;

    const int64_t updates = std::max<int64_t>(1, hyper.total_steps / (static_cast<int64_t>(W) * N));
    int64_t env_steps = 0;
    int64_t next_episode = W;
    double last_loss = 0.0;

    for (int64_t u = 0; u < updates; ++u) {
        for (int t = 0; t < N; ++t) {
            for (int wi = 0; wi < W; ++wi) {
                const int slot = wi * N + t;
                std::memcpy(roll_obs.ptr() + slot * obs_len, envs[wi]->raster().data.data(),
                            sizeof(float) * obs_len);
                std::vector<float> out = net.forward(envs[wi]->raster().data);
                out.resize(actions);
                std::vector<double> pi = softmax_t(out, 1.0);
                double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                int a = actions - 1;
                double acc = 0.0;
                for (int j = 0; j < actions; ++j) {
                    acc += pi[j];
                    if (r <= acc) { a = j; break; }
                }
                StepOut so = envs[wi]->step(a);
                roll_action[slot] = a;
                roll_reward[slot] = static_cast<float>(so.reward);
                roll_done[slot] = so.done ? 1 : 0;
                episode_reward[wi] += so.reward;
                ++env_steps;
                if (so.done) {
                    res.log.push_back({env_steps, episode_reward[wi], last_loss, 0.0});
                    log_entry(log_stream, res.log.back());
                    episode_reward[wi] = 0.0;
                    envs[wi]->reset(derive_seed(seed, 50 + next_episode++));
                }
            }
        }
        for (int wi = 0; wi < W; ++wi)
            std::memcpy(boot_obs.ptr() + static_cast<int64_t>(wi) * obs_len,
                        envs[wi]->raster().data.data(), sizeof(float) * obs_len);
        Tensor boot_out = net.forward_batch(boot_obs, ws_boot);

        // n-step discounted returns, cut at episode boundaries
        std::vector<double> returns(static_cast<size_t>(W) * N, 0.0);
        for (int wi = 0; wi < W; ++wi) {
            double acc = roll_done[wi * N + N - 1]
                             ? 0.0
                             : boot_out.data[static_cast<size_t>(wi) * (actions + 1) + actions];
            for (int t = N - 1; t >= 0; --t) {
                const int slot = wi * N + t;
                if (t < N - 1 && roll_done[slot]) acc = 0.0;
                acc = roll_reward[slot] + hyper.gamma * acc;
                returns[slot] = acc;
            }
        }

        Tensor out = net.forward_batch(roll_obs, ws);
        Tensor upstream({W * N, actions + 1});
        double loss = 0.0;
        const double inv = 1.0 / (static_cast<double>(W) * N);
        for (int s = 0; s < W * N; ++s) {
            const float* o = out.ptr() + static_cast<size_t>(s) * (actions + 1);
            std::vector<float> logits(o, o + actions);
            std::vector<double> pi = softmax_t(logits, 1.0);
            double v = o[actions];
            double adv = returns[s] - v;
            double entropy = 0.0;
            for (int j = 0; j < actions; ++j)
                if (pi[j] > 0) entropy -= pi[j] * std::log(pi[j]);
            loss += inv * (-std::log(std::max(pi[roll_action[s]], 1e-12)) * adv +
                           0.5 * hyper.value_coef * adv * adv - hyper.entropy_coef * entropy);
            float* up = upstream.ptr() + static_cast<size_t>(s) * (actions + 1);
            for (int j = 0; j < actions; ++j) {
                double d_policy = (pi[j] - (j == roll_action[s] ? 1.0 : 0.0)) * adv;
                double d_entropy = hyper.entropy_coef * pi[j] *
                                   (std::log(std::max(pi[j], 1e-12)) + entropy);
                up[j] = static_cast<float>(inv * (d_policy + d_entropy));
            }
            up[actions] = static_cast<float>(inv * hyper.value_coef * (v - returns[s]));
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("a2c training diverged: non-finite loss at update " +
                                     std::to_string(u));
        net.backward(ws, upstream, &grad, nullptr);
        adam.step(net.params, grad);
        last_loss = loss;
    }
    res.model.train_steps = env_steps;
    return res;
}

// ---------------------------------------------------------------------------
// evaluation

EvalResult evaluate_action_policy(const RasterActionPolicy& act, const EnvConfig& cfg, int trials,
                                  int episodes_per_trial, uint64_t seed) {
    if (trials < 1 || episodes_per_trial < 1)
        throw std::invalid_argument("evaluation needs at least one trial and episode");
    EvalResult res;
    for (int t = 0; t < trials; ++t) {
        double trial_sum = 0.0;
        for (int e = 0; e < episodes_per_trial; ++e) {
            EnvSession session(cfg, derive_seed(seed, t * 1000 + e));
            double total = 0.0;
            while (!session.done()) {
                int a = act(session.raster());
                total += session.step(a).reward;
            }
            trial_sum += total;
        }
        res.per_trial.push_back(trial_sum / episodes_per_trial);
    }
    for (double v : res.per_trial) res.mean_reward += v;
    res.mean_reward /= trials;
    return res;
}

EvalResult evaluate_policy(const RasterPolicy& policy, const EnvConfig& cfg, int trials,
                           int episodes_per_trial, uint64_t seed) {
    return evaluate_action_policy(
        [&policy](const RasterObs& s) { return policy.greedy(s); }, cfg, trials,
        episodes_per_trial, seed);
}

EvalResult evaluate_random(const EnvConfig& cfg, int trials, int episodes_per_trial, uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(derive_seed(seed, 777));
    std::uniform_int_distribution<int> pick(0, cfg.action_count() - 1);
    return evaluate_action_policy(
        [rng, pick](const RasterObs&) mutable { return pick(*rng); }, cfg, trials,
        episodes_per_trial, seed);
}

}  // namespace cfrl
