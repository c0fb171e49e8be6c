#include "cfrl/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace cfrl {

namespace {

void check_shapes(const RasterObs& a, const RasterObs& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("raster shapes differ");
    if (a.data.size() != b.data.size()) throw std::invalid_argument("raster sizes differ");
}

const char* kDefinitions =
    "validity_pct: share of queries whose rendered counterfactual changes the teacher's action "
    "to the student's counterfactual action. sparsity_pct: percentage of pixels altered by more "
    "than eps_pix, averaged over the stacked frames, over valid counterfactuals. "
    "proximity_mean_abs: mean |delta| over altered pixels. proximity_l1_per_frame: summed "
    "|delta| over altered pixels divided by the frame count.";

}  // namespace

double sparsity_pct(const RasterObs& a, const RasterObs& b, double eps_pix) {
    check_shapes(a, b);
    size_t changed = 0;
    for (size_t i = 0; i < a.data.size(); ++i)
        if (std::abs(static_cast<double>(a.data[i]) - b.data[i]) > eps_pix) ++changed;
    return 100.0 * static_cast<double>(changed) / static_cast<double>(a.data.size());
}

ProximityValue proximity(const RasterObs& a, const RasterObs& b, double eps_pix) {
    check_shapes(a, b);
    ProximityValue p;
    double sum = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = std::abs(static_cast<double>(a.data[i]) - b.data[i]);
        if (d > eps_pix) {
            sum += d;
            ++p.modified_pixels;
        }
    }
    p.mean_abs = p.modified_pixels > 0 ? sum / p.modified_pixels : 0.0;
    p.l1_per_frame = sum / a.k;
    return p;
}

double validity_rate(const std::vector<CFResult>& results) {
    if (results.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (const auto& r : results) s += r.validity;
    return 100.0 * s / static_cast<double>(results.size());
}

MetricReport build_report(const std::vector<CFResult>& results, const EnvConfig& env_cfg,
                          const std::string& config_echo, double eps_pix) {
    MetricReport rep;
    rep.env = env_kind_name(env_cfg.kind);
    rep.config_echo = config_echo;
    rep.definitions = kDefinitions;
    rep.eps_pix = eps_pix;
    rep.n_queries = static_cast<int>(results.size());
    rep.validity_pct = results.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : validity_rate(results);

    std::map<int, ActionBreakdown> per_action;
    double spr = 0.0, prx_mean = 0.0, prx_l1 = 0.0;
    for (const auto& r : results) {
        rep.n_rendered += r.rendered ? 1 : 0;
        auto& slot = per_action[r.target_action];
        slot.target_action = r.target_action;
        slot.n += 1;
        slot.n_valid += r.validity;
        if (r.validity != 1) continue;
        RasterObs s = render_from_objects(r.sigma, env_cfg);
        RasterObs s_cf = render_from_objects(r.sigma_cf, env_cfg);
        rep.n_valid += 1;
        spr += sparsity_pct(s, s_cf, eps_pix);
        ProximityValue p = proximity(s, s_cf, eps_pix);
        prx_mean += p.mean_abs;
        prx_l1 += p.l1_per_frame;
    }
    if (rep.n_valid > 0) {
        rep.sparsity_pct = spr / rep.n_valid;
        rep.proximity_mean_abs = prx_mean / rep.n_valid;
        rep.proximity_l1_per_frame = prx_l1 / rep.n_valid;
    }
    for (const auto& [k, v] : per_action) rep.per_action.push_back(v);
    return rep;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["validity_pct"] = validity_pct;
    j["sparsity_pct"] = sparsity_pct;
    j["proximity_mean_abs"] = proximity_mean_abs;
    j["proximity_l1_per_frame"] = proximity_l1_per_frame;
    j["n_queries"] = n_queries;
    j["n_rendered"] = n_rendered;
    j["n_valid"] = n_valid;
    j["eps_pix"] = eps_pix;
    j["env"] = env;
    j["definitions"] = definitions;
    if (!config_echo.empty()) j["config"] = nlohmann::json::parse(config_echo, nullptr, false);
    nlohmann::json pa = nlohmann::json::array();
    for (const auto& a : per_action)
        pa.push_back({{"target_action", a.target_action}, {"n", a.n}, {"n_valid", a.n_valid}});
    j["per_action"] = pa;
    return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    MetricReport r;
    r.validity_pct = j.at("validity_pct").get<double>();
    r.sparsity_pct = j.at("sparsity_pct").get<double>();
    r.proximity_mean_abs = j.at("proximity_mean_abs").get<double>();
    r.proximity_l1_per_frame = j.at("proximity_l1_per_frame").get<double>();
    r.n_queries = j.at("n_queries").get<int>();
    r.n_rendered = j.at("n_rendered").get<int>();
    r.n_valid = j.at("n_valid").get<int>();
    r.eps_pix = j.at("eps_pix").get<double>();
    r.env = j.at("env").get<std::string>();
    for (const auto& a : j.at("per_action")) {
        ActionBreakdown b;
        b.target_action = a.at("target_action").get<int>();
        b.n = a.at("n").get<int>();
        b.n_valid = a.at("n_valid").get<int>();
        r.per_action.push_back(b);
    }
    return r;
}

std::string MetricReport::to_text() const {
    std::ostringstream out;
    out << "env: " << env << "  queries: " << n_queries << "  rendered: " << n_rendered
        << "  valid: " << n_valid << "\n";
    out << std::fixed << std::setprecision(2);
    out << std::setw(8) << "Vld%" << std::setw(8) << "Spr%" << std::setw(8) << "Prx"
        << std::setw(12) << "Prx(L1/f)" << "\n";
    out << std::setw(8) << validity_pct << std::setw(8) << sparsity_pct << std::setw(8)
        << proximity_mean_abs << std::setw(12) << proximity_l1_per_frame << "\n";
    if (!per_action.empty()) {
        out << "per target action:\n";
        for (const auto& a : per_action)
            out << "  action " << a.target_action << ": valid " << a.n_valid << "/" << a.n << "\n";
    }
    return out.str();
}

std::vector<LambdaRow> lambda_ablation(const std::vector<CFQuery>& queries,
                                       const RasterPolicy& teacher, const StudentModel& student,
                                       const EnvConfig& env_cfg, const CFConfig& base_cfg,
                                       const std::vector<double>& lambda_set) {
    if (lambda_set.empty()) throw std::invalid_argument("lambda_ablation: empty lambda set");
    std::vector<LambdaRow> rows;
    for (double lam : lambda_set) {
        CFConfig cfg = base_cfg;
        cfg.lambda_max = lam;
        std::vector<CFResult> results = run_batch(queries, teacher, student, env_cfg, cfg);
        MetricReport rep = build_report(results, env_cfg, "");
        LambdaRow row;
        row.lambda = lam;
        row.validity_pct = rep.validity_pct;
        row.sparsity_pct = rep.sparsity_pct;
        row.proximity_mean_abs = rep.proximity_mean_abs;
        row.n = rep.n_queries;
        rows.push_back(row);
    }
    return rows;
}

std::string lambda_table_text(const std::vector<LambdaRow>& rows) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << std::setw(8) << "lambda" << std::setw(8) << "Vld%" << std::setw(8) << "Spr%"
        << std::setw(8) << "Prx" << "\n";
    for (const auto& r : rows)
        out << std::setw(8) << r.lambda << std::setw(8) << r.validity_pct << std::setw(8)
            << r.sparsity_pct << std::setw(8) << r.proximity_mean_abs << "\n";
    return out.str();
}

}  // namespace cfrl
