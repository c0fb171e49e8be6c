#include "cfrl/distill.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfrl {

std::string loss_name(LossKind k) {
    switch (k) {
        case LossKind::MSE: return "mse";
        case LossKind::NLL: return "nll";
        case LossKind::KL: return "kl";
    }
    return "?";
}

LossKind loss_from(const std::string& name) {
    if (name == "mse") return LossKind::MSE;
    if (name == "nll") return LossKind::NLL;
    if (name == "kl") return LossKind::KL;
    throw ConfigError("unknown distillation loss: " + name + " (expected mse, nll or kl)");
}

void DistillDataset::check_record(const DistillRecord& r) const {
    if (static_cast<int>(r.sigma.size()) != feature_dim)
        throw IoError("dataset record feature length mismatch");
    if (static_cast<int>(r.v_t.size()) != action_count)
        throw IoError("dataset record action length mismatch");
    if (r.a_best != argmax(r.v_t)) throw IoError("dataset record a_best is not argmax(v_t)");
}

DistillDataset collect_dataset(const RasterPolicy& teacher, const EnvConfig& cfg, int n,
                               uint64_t seed, double eps_mix) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    if (eps_mix < 0.0 || eps_mix > 1.0) throw std::invalid_argument("eps_mix must be in [0,1]");
    DistillDataset data;
    data.feature_dim = cfg.feature_dim();
    data.action_count = teacher.action_count();
    data.records.reserve(n);

    std::mt19937_64 rng(derive_seed(seed, 11));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any_action(0, cfg.action_count() - 1);

    int64_t episode = 0;
    EnvSession session(cfg, derive_seed(seed, 500 + episode));
    while (static_cast<int>(data.records.size()) < n) {
        DistillRecord rec;
        rec.sigma = session.objects();
        rec.v_t = teacher.soft_values(session.raster());
        rec.a_best = argmax(rec.v_t);
        data.records.push_back(std::move(rec));
        int a = unit(rng) < eps_mix ? any_action(rng) : data.records.back().a_best;
        if (session.step(a).done) {
            ++episode;
            session.reset(derive_seed(seed, 500 + episode));
        }
    }
    nlohmann::json prov;
    prov["env"] = env_kind_name(cfg.kind);
    prov["policy"] = "eps_mix=" + std::to_string(eps_mix);
    prov["seed"] = seed;
    prov["env_digest"] = hex64(cfg.digest());
    data.provenance = prov.dump();
    return data;
}

// ---------------------------------------------------------------------------
// losses

namespace {

std::vector<double> log_softmax(const std::vector<float>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (float x : v) sum += std::exp(static_cast<double>(x) - mx);
    double lse = mx + std::log(sum);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) - lse;
    return out;
}

void check_loss_inputs(const std::vector<float>& v_t, const std::vector<float>& v_s, int a_best) {
    if (v_t.size() != v_s.size() || v_t.empty())
        throw std::invalid_argument("kd_loss: teacher/student action dims differ");
    if (a_best < 0 || a_best >= static_cast<int>(v_t.size()))
        throw std::invalid_argument("kd_loss: a_best out of range");
    if (!all_finite(v_t) || !all_finite(v_s))
        throw std::invalid_argument("kd_loss: non-finite inputs");
}

}  // namespace

double kd_loss_grad(LossKind kind, const std::vector<float>& v_t, const std::vector<float>& v_s,
                    int a_best, double tau, std::vector<double>& dv_s) {
    check_loss_inputs(v_t, v_s, a_best);
    const size_t n = v_t.size();
    dv_s.assign(n, 0.0);
    switch (kind) {
        case LossKind::MSE: {
            double loss = 0.0;
            for (size_t i = 0; i < n; ++i) {
                double d = static_cast<double>(v_t[i]) - static_cast<double>(v_s[i]);
                loss += d * d;
                dv_s[i] = -2.0 * d;
            }
            return loss;
        }
        case LossKind::NLL: {
            std::vector<double> lq = log_softmax(v_s);
            for (size_t i = 0; i < n; ++i) dv_s[i] = std::exp(lq[i]);
            dv_s[a_best] -= 1.0;
            return -lq[a_best];
        }
        case LossKind::KL: {
            if (tau <= 0.0) throw std::invalid_argument("kd_loss: KL needs tau > 0");
            std::vector<double> p = softmax_t(v_t, tau);
            std::vector<double> lq = log_softmax(v_s);
            double loss = 0.0;
            for (size_t i = 0; i < n; ++i) {
                if (p[i] > 0.0) loss += p[i] * (std::log(p[i]) - lq[i]);
                dv_s[i] = std::exp(lq[i]) - p[i];
            }
            return loss;
        }
    }
    throw std::logic_error("unreachable loss kind");
}

double kd_loss(LossKind kind, const std::vector<float>& v_t, const std::vector<float>& v_s,
               int a_best, double tau) {
    std::vector<double> scratch;
    return kd_loss_grad(kind, v_t, v_s, a_best, tau, scratch);
}

// ---------------------------------------------------------------------------
// training

StudentTrainResult train_student(const DistillDataset& data, LossKind kind, double tau, int epochs,
                                 int batch, double lr, uint64_t seed, int hidden, EnvKind env) {
    if (data.records.empty()) throw std::invalid_argument("train_student: empty dataset");
    if (epochs < 1 || batch < 1) throw std::invalid_argument("train_student: bad epochs/batch");
    const int F = data.feature_dim;
    const int A = data.action_count;

    StudentTrainResult res;
    res.model.loss_kind = kind;
    res.model.tau = tau;
    res.model.env = env;
    res.model.actions = A;
    res.model.net = Network::make({F}, student_arch(hidden, A), derive_seed(seed, 21));
    Network& net = res.model.net;

    AdamState adam;
    adam.lr = lr;
    std::mt19937_64 rng(derive_seed(seed, 22));
    std::vector<size_t> order(data.records.size());
    std::iota(order.begin(), order.end(), 0);

    Workspace ws;
    std::vector<float> grad;
    std::vector<double> dv(A);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += batch) {
            const int B = static_cast<int>(std::min<size_t>(batch, order.size() - start));
            Tensor in({B, F});
            for (int b = 0; b < B; ++b)
                std::copy_n(data.records[order[start + b]].sigma.data(), F, in.ptr() + b * F);
            Tensor out = net.forward_batch(in, ws);
            Tensor upstream({B, A});
            if (!all_finite(out.data))
                throw std::runtime_error("student training diverged: non-finite outputs in epoch " +
                                         std::to_string(epoch));
            for (int b = 0; b < B; ++b) {
                const auto& rec = data.records[order[start + b]];
                std::vector<float> v_s(out.ptr() + static_cast<size_t>(b) * A,
                                       out.ptr() + static_cast<size_t>(b + 1) * A);
                epoch_sum += kd_loss_grad(kind, rec.v_t, v_s, rec.a_best, tau, dv);
                for (int j = 0; j < A; ++j)
                    upstream.data[static_cast<size_t>(b) * A + j] = static_cast<float>(dv[j]);
            }
            net.backward(ws, upstream, &grad, nullptr);
            if (!all_finite(grad))
                throw std::runtime_error("student training diverged: non-finite gradient in epoch " +
                                         std::to_string(epoch));
            adam.step(net.params, grad);
        }
        double mean = epoch_sum / static_cast<double>(data.records.size());
        if (!std::isfinite(mean))
            throw std::runtime_error("student training diverged: non-finite loss in epoch " +
                                     std::to_string(epoch));
        res.epoch_loss.push_back(mean);
    }
    return res;
}

// ---------------------------------------------------------------------------
// fidelity

FidelityReport fidelity(const RasterPolicy& teacher, const StudentModel& student,
                        const EnvConfig& cfg, int trials, int episodes_per_trial, uint64_t seed) {
    if (teacher.action_count() != student.actions)
        throw std::invalid_argument("fidelity: teacher and student action spaces differ");
    FidelityReport rep;
    rep.teacher_score = evaluate_policy(teacher, cfg, trials, episodes_per_trial, seed).mean_reward;

    // student rollouts act on the object-list view of its own sessions
    double student_total = 0.0;
    for (int t = 0; t < trials; ++t) {
        double trial_sum = 0.0;
        for (int e = 0; e < episodes_per_trial; ++e) {
            EnvSession session(cfg, derive_seed(seed, t * 1000 + e));
            double total = 0.0;
            while (!session.done()) total += session.step(student.greedy(session.objects())).reward;
            trial_sum += total;
        }
        student_total += trial_sum / episodes_per_trial;
    }
    rep.student_score = student_total / trials;

    if (rep.teacher_score != 0.0) {
        rep.relative_defined = true;
        rep.relative_pct = rep.student_score / rep.teacher_score * 100.0;
    }

    // agreement over fresh teacher-greedy rollouts
    int agree = 0, states = 0;
    for (int t = 0; t < trials; ++t) {
        EnvSession session(cfg, derive_seed(seed, 900000 + t));
        while (!session.done()) {
            int a_t = teacher.greedy(session.raster());
            int a_s = student.greedy(session.objects());
            agree += a_t == a_s ? 1 : 0;
            ++states;
            session.step(a_t);
        }
    }
    rep.agreement_states = states;
    rep.agreement_pct = states > 0 ? 100.0 * agree / states : 0.0;
    return rep;
}

double dataset_agreement_pct(const StudentModel& student, const DistillDataset& data, size_t begin,
                             size_t end) {
    end = std::min(end, data.records.size());
    if (begin >= end) throw std::invalid_argument("empty dataset slice");
    int agree = 0;
    for (size_t i = begin; i < end; ++i)
        agree += student.greedy(data.records[i].sigma) == data.records[i].a_best ? 1 : 0;
    return 100.0 * agree / static_cast<double>(end - begin);
}

}  // namespace cfrl
