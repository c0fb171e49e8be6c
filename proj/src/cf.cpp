#include "cfrl/cf.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <sstream>

namespace cfrl {

double CFConfig::lambda_max_raw() const {
    if (lambda_max <= 0.0 || lambda_max >= 1.0)
        throw ConfigError("cf.lambda_max must be a weight in (0,1)");
    return lambda_max / (1.0 - lambda_max);
}

void CFConfig::validate(int feature_dim) const {
    if (lambda_init <= 0.0) throw ConfigError("cf.lambda_init must be > 0");
    (void)lambda_max_raw();
    if (lambda_growth <= 1.0) throw ConfigError("cf.lambda_growth must be > 1");
    if (inner_steps < 1 || max_outer < 1) throw ConfigError("cf iteration counts must be positive");
    if (input_lr <= 0.0) throw ConfigError("cf.input_lr must be > 0");
    if (!features.empty() && static_cast<int>(features.size()) != feature_dim)
        throw ConfigError("cf feature metadata length does not match the environment");
    for (const auto& f : features)
        if (f.lo > f.hi) throw ConfigError("cf bound inverted for feature " + f.name);
    if (quant_grid && *quant_grid <= 0.0) throw ConfigError("cf.quant_grid must be > 0");
}

CFConfig CFConfig::from_kv(const KeyValueConfig& kv) {
    CFConfig c;
    c.lambda_init = kv.get_double("cf.lambda_init", c.lambda_init);
    c.lambda_max = kv.get_double("cf.lambda_max", c.lambda_max);
    c.lambda_growth = kv.get_double("cf.lambda_growth", c.lambda_growth);
    c.inner_steps = static_cast<int>(kv.get_int("cf.inner_steps", c.inner_steps));
    c.input_lr = kv.get_double("cf.input_lr", c.input_lr);
    c.max_outer = static_cast<int>(kv.get_int("cf.max_outer", c.max_outer));
    c.delta = kv.get_double("cf.delta", c.delta);
    if (kv.has("cf.quant_grid")) c.quant_grid = kv.get_double("cf.quant_grid", 0.0);
    return c;
}

uint64_t CFConfig::digest() const {
    std::ostringstream s;
    s << lambda_init << ' ' << lambda_max << ' ' << lambda_growth << ' ' << inner_steps << ' '
      << input_lr << ' ' << max_outer << ' ' << delta << ' ' << (quant_grid ? *quant_grid : -1.0);
    return fnv1a64(s.str());
}

// ---------------------------------------------------------------------------

namespace {

double l2_dist(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

double target_prob(const Network& net, const std::vector<float>& sigma, int target,
                   std::vector<float>* out_values = nullptr) {
    std::vector<float> v = net.forward(sigma);
    if (!all_finite(v)) throw std::runtime_error("student produced non-finite output");
    std::vector<double> p = softmax_t(v, 1.0);
    if (out_values) *out_values = std::move(v);
    return p[target];
}

}  // namespace

double cf_loss(const Network& student, const std::vector<float>& sigma_cf, double lambda_raw,
               const std::vector<float>& sigma, int target_action) {
    if (lambda_raw <= 0.0) throw std::invalid_argument("cf_loss: lambda must be > 0");
    if (sigma.size() != sigma_cf.size()) throw std::invalid_argument("cf_loss: shape mismatch");
    double p = target_prob(student, sigma_cf, target_action);
    return lambda_raw * (p - 1.0) * (p - 1.0) + l2_dist(sigma, sigma_cf);
}

std::vector<float> project_feasible(std::vector<float> sigma, const CFConfig& cfg,
                                    const std::vector<float>& original) {
    if (!cfg.features.empty() && cfg.features.size() != sigma.size())
        throw std::invalid_argument("project_feasible: feature metadata mismatch");
    if (original.size() != sigma.size())
        throw std::invalid_argument("project_feasible: original state mismatch");
    for (size_t i = 0; i < sigma.size(); ++i) {
        if (!cfg.features.empty()) {
            const auto& f = cfg.features[i];
            sigma[i] = std::clamp(sigma[i], static_cast<float>(f.lo), static_cast<float>(f.hi));
        }
        if (cfg.quant_grid) {
            double g = *cfg.quant_grid;
            sigma[i] = static_cast<float>(std::lround(sigma[i] / g) * g);
        }
        if (!cfg.features.empty() && cfg.features[i].frozen) sigma[i] = original[i];
    }
    return sigma;
}

namespace {

// Bisects the segment between an unflipped and a flipped iterate for the
// closest feasible point that still maps to the target action.
void refine_crossing(const Network& net, const CFConfig& cfg, const std::vector<float>& sigma,
                     int target, const std::vector<float>& unflipped,
                     const std::vector<float>& flipped, std::vector<float>& best,
                     double& best_dist) {
    std::vector<float> lo = unflipped, hi = flipped;
    for (int it = 0; it < 30; ++it) {
        std::vector<float> mid(lo.size());
        for (size_t i = 0; i < lo.size(); ++i) mid[i] = 0.5f * (lo[i] + hi[i]);
        mid = project_feasible(std::move(mid), cfg, sigma);
        if (mid == lo || mid == hi) break;
        if (argmax(net.forward(mid)) == target)
            hi = std::move(mid);
        else
            lo = std::move(mid);
    }
    double d = l2_dist(sigma, hi);
    if (best.empty() || d < best_dist) {
        best = hi;
        best_dist = d;
    }
}

}  // namespace

CFResult generate_cf(const StudentModel& student, const std::vector<float>& sigma,
                     int target_action, const CFConfig& cfg) {
    cfg.validate(static_cast<int>(sigma.size()));
    if (static_cast<int>(sigma.size()) != student.net.input_numel())
        throw std::invalid_argument("generate_cf: state length does not match student input");
    if (target_action < 0 || target_action >= student.actions)
        throw std::invalid_argument("generate_cf: target action out of range");

    CFResult res;
    res.sigma = sigma;
    res.target_action = target_action;
    res.original_action = student.greedy(sigma);
    if (res.original_action == target_action)
        throw std::invalid_argument("generate_cf: state already maps to the target action");
    if (!cfg.features.empty()) {
        bool any_free = false;
        for (const auto& f : cfg.features) any_free |= !f.frozen;
        if (!any_free) throw std::invalid_argument("generate_cf: all features are frozen");
    }

    const Network& net = student.net;
    const int A = student.actions;
    const double lam_cap = cfg.lambda_max_raw();

    std::vector<float> best;
    double best_dist = 0.0;
    std::vector<float> last_iterate = project_feasible(sigma, cfg, sigma);
    int iterations = 0;

    double lam = std::min(cfg.lambda_init, lam_cap);
    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        std::vector<float> x = project_feasible(sigma, cfg, sigma);
        last_iterate = x;
        bool flipped_this_round = false;
        bool prev_flipped = false;
        std::vector<float> prev = x;
        for (int it = 0; it <= cfg.inner_steps; ++it) {
            std::vector<float> values;
            double p = target_prob(net, x, target_action, &values);
            bool flipped = argmax(values) == target_action;
            if (flipped) {
                double d = l2_dist(sigma, x);
                if (best.empty() || d < best_dist) {
                    best = x;
                    best_dist = d;
                }
                flipped_this_round = true;
            }
            if (flipped != prev_flipped && it > 0) {
                const std::vector<float>& unflipped = flipped ? prev : x;
                const std::vector<float>& crossed = flipped ? x : prev;
                refine_crossing(net, cfg, sigma, target_action, unflipped, crossed, best,
                                best_dist);
            }
            prev = x;
            prev_flipped = flipped;
            if (it == cfg.inner_steps) break;

            // d/dlogits of lambda (p_t - 1)^2
            std::vector<double> q = softmax_t(values, 1.0);
            std::vector<float> upstream(A);
            double c = lam * 2.0 * (p - 1.0) * p;
            for (int j = 0; j < A; ++j)
                upstream[j] = static_cast<float>(c * ((j == target_action ? 1.0 : 0.0) - q[j]));
            std::vector<float> g = net.grad_input(x, upstream);
            double d = l2_dist(sigma, x);
            if (d > 0.0)
                for (size_t i = 0; i < g.size(); ++i)
                    g[i] += static_cast<float>((static_cast<double>(x[i]) - sigma[i]) / d);
            for (size_t i = 0; i < g.size(); ++i) x[i] -= static_cast<float>(cfg.input_lr * g[i]);
            x = project_feasible(std::move(x), cfg, sigma);
            ++iterations;
            double moved = 0.0;
            for (size_t i = 0; i < x.size(); ++i)
                moved += std::abs(static_cast<double>(x[i]) - last_iterate[i]);
            last_iterate = x;
            if (moved < cfg.move_tol) break;
        }
        if (flipped_this_round) {
            res.converged = true;
            break;  // first lambda whose inner solution flips ends the sweep
        }
        if (lam >= lam_cap) break;
        lam = std::min(lam * cfg.lambda_growth, lam_cap);
    }

    res.iterations = iterations;
    if (res.converged) {
        res.sigma_cf = best;
        res.dist = best_dist;
    } else {
        res.sigma_cf = last_iterate;
        res.dist = l2_dist(sigma, last_iterate);
    }
    return res;
}

int validate_cf(const RasterPolicy& teacher, const StudentModel& student, CFResult& result,
                const EnvConfig& env_cfg) {
    RasterObs s = render_from_objects(result.sigma, env_cfg);
    result.teacher_action_orig = teacher.greedy(s);
    result.student_action_cf = student.greedy(result.sigma_cf);
    try {
        RasterObs s_cf = render_from_objects(result.sigma_cf, env_cfg);
        result.rendered = true;
        result.teacher_action_cf = teacher.greedy(s_cf);
    } catch (const InfeasibleState& e) {
        result.rendered = false;
        result.validity = 0;
        result.status = std::string("infeasible render: ") + e.what();
        return 0;
    }
    result.validity = (result.teacher_action_orig != result.teacher_action_cf &&
                       result.teacher_action_cf == result.student_action_cf)
                          ? 1
                          : 0;
    return result.validity;
}

BatchSummary summarize(const std::vector<CFResult>& results) {
    BatchSummary s;
    s.n = static_cast<int>(results.size());
    double dist_sum = 0.0;
    for (const auto& r : results) {
        s.n_converged += r.converged ? 1 : 0;
        s.n_valid += r.validity;
        if (r.converged) dist_sum += r.dist;
    }
    if (s.n > 0) {
        s.validity_pct = 100.0 * s.n_valid / s.n;
        s.convergence_pct = 100.0 * s.n_converged / s.n;
    }
    if (s.n_converged > 0) s.mean_dist = dist_sum / s.n_converged;
    return s;
}

std::vector<CFResult> run_batch(const std::vector<CFQuery>& queries, const RasterPolicy& teacher,
                                const StudentModel& student, const EnvConfig& env_cfg,
                                const CFConfig& cf_cfg, BatchSummary* summary) {
    std::vector<CFResult> results;
    results.reserve(queries.size());
    for (const auto& q : queries) {
        CFResult r;
        try {
            CFConfig cfg = cf_cfg;
            if (cfg.features.empty()) cfg.features = feature_info(env_cfg, q.sigma);
            r = generate_cf(student, q.sigma, q.target_action, cfg);
            validate_cf(teacher, student, r, env_cfg);
        } catch (const std::exception& e) {
            r.sigma = q.sigma;
            r.target_action = q.target_action;
            r.status = std::string("error: ") + e.what();
            r.validity = 0;
        }
        results.push_back(std::move(r));
    }
    if (summary) *summary = summarize(results);
    return results;
}

std::vector<CFQuery> sample_queries(const RasterPolicy& teacher, const StudentModel& student,
                                    const EnvConfig& cfg, int count, int target_action,
                                    uint64_t seed) {
    std::vector<CFQuery> queries;
    std::mt19937_64 rng(derive_seed(seed, 31));
    int64_t episode = 0;
    EnvSession session(cfg, derive_seed(seed, 700 + episode));
    int guard = 0;
    while (static_cast<int>(queries.size()) < count && guard++ < count * 200) {
        std::vector<float> sigma = session.objects();
        int a_s = student.greedy(sigma);
        int target = target_action;
        if (target < 0) {
            // runner-up of the student's scores
            std::vector<float> v = student.values(sigma);
            v[a_s] = -std::numeric_limits<float>::infinity();
            target = argmax(v);
        }
        if (target != a_s) queries.push_back({std::move(sigma), target});
        int a = teacher.greedy(session.raster());
        // light exploration keeps the visited state set diverse
        if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.1)
            a = std::uniform_int_distribution<int>(0, cfg.action_count() - 1)(rng);
        if (session.step(a).done) {
            ++episode;
            session.reset(derive_seed(seed, 700 + episode));
        }
    }
    if (static_cast<int>(queries.size()) < count)
        throw std::runtime_error("sample_queries: could not gather enough query states");
    return queries;
}

std::string cf_result_to_json(const CFResult& r) {
    nlohmann::json j;
    j["sigma"] = r.sigma;
    j["sigma_cf"] = r.sigma_cf;
    j["original_action"] = r.original_action;
    j["target_action"] = r.target_action;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    j["dist"] = r.dist;
    j["validity"] = r.validity;
    j["rendered"] = r.rendered;
    j["teacher_action_orig"] = r.teacher_action_orig;
    j["teacher_action_cf"] = r.teacher_action_cf;
    j["student_action_cf"] = r.student_action_cf;
    j["status"] = r.status;
    return j.dump();
}

CFResult cf_result_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    CFResult r;
    r.sigma = j.at("sigma").get<std::vector<float>>();
    r.sigma_cf = j.at("sigma_cf").get<std::vector<float>>();
    r.original_action = j.at("original_action").get<int>();
    r.target_action = j.at("target_action").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.iterations = j.at("iterations").get<int>();
    r.dist = j.at("dist").get<double>();
    r.validity = j.at("validity").get<int>();
    r.rendered = j.at("rendered").get<bool>();
    r.teacher_action_orig = j.at("teacher_action_orig").get<int>();
    r.teacher_action_cf = j.at("teacher_action_cf").get<int>();
    r.student_action_cf = j.at("student_action_cf").get<int>();
    r.status = j.at("status").get<std::string>();
    return r;
}

}  // namespace cfrl
