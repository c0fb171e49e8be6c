#include "cfrl/explain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cfrl {

namespace {

const std::vector<std::string> kTtcNames = {"TTC_left", "TTC_Forward", "TTC_right"};

int lane_index(const EnvConfig& cfg, double y) {
    int lane = static_cast<int>(std::floor(y / cfg.lane_width));
    return std::clamp(lane, 0, cfg.lanes - 1);
}

}  // namespace

TtcFeatures compute_ttc(const std::vector<float>& sigma, const EnvConfig& cfg, double ttc_max) {
    if (cfg.kind != EnvKind::Highway)
        throw std::invalid_argument("compute_ttc: highway observations only");
    if (static_cast<int>(sigma.size()) != cfg.feature_dim())
        throw std::invalid_argument("compute_ttc: feature length mismatch");
    const double dy_scale = cfg.y_span;
    const double dx_scale = cfg.x_range;
    const double v_scale = cfg.x_range / 4.0;

    const double ego_y = sigma[1] * dy_scale;
    const int ego_lane = lane_index(cfg, ego_y);

    TtcFeatures out;
    out.left = out.forward = out.right = ttc_max;
    std::array<double, 3> best_dx = {1e18, 1e18, 1e18};
    for (int slot = 1; slot < cfg.vehicle_slots; ++slot) {
        const size_t o = static_cast<size_t>(slot) * 4;
        if (sigma[o] == 0.0f && sigma[o + 1] == 0.0f && sigma[o + 2] == 0.0f &&
            sigma[o + 3] == 0.0f)
            continue;
        const double dx = sigma[o] * dx_scale;
        if (dx <= 0.0) continue;  // behind or alongside
        const double pv_y = ego_y + sigma[o + 1] * dy_scale;
        const int lane = lane_index(cfg, pv_y);
        int rel = lane - ego_lane;
        if (rel < -1 || rel > 1) continue;
        if (dx >= best_dx[rel + 1]) continue;
        best_dx[rel + 1] = dx;

        const double closing = -(sigma[o + 2] * v_scale);  // ego faster -> positive
        double ttc = ttc_max;
        if (closing > 0.0) {
            double gap = std::max(dx - cfg.vehicle_length, 0.1);
            ttc = std::min(gap / closing, ttc_max);
        }
        if (rel == -1) { out.left = ttc; out.pv_left = slot; }
        else if (rel == 0) { out.forward = ttc; out.pv_forward = slot; }
        else { out.right = ttc; out.pv_right = slot; }
    }
    return out;
}

RuleDatasetResult build_rule_dataset(const std::vector<CFResult>& results, const EnvConfig& cfg,
                                     double ttc_max) {
    RuleDatasetResult out;
    for (const auto& r : results) {
        if (r.validity != 1) {
            ++out.skipped_invalid;
            continue;
        }
        RuleSample s;
        s.ttc = compute_ttc(r.sigma_cf, cfg, ttc_max);
        s.action = r.teacher_action_cf;
        out.samples.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CART

namespace {

double gini(const std::vector<int>& counts, int total) {
    if (total == 0) return 0.0;
    double g = 1.0;
    for (int c : counts) {
        double p = static_cast<double>(c) / total;
        g -= p * p;
    }
    return g;
}

int majority(const std::vector<int>& counts) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(counts.size()); ++i)
        if (counts[i] > counts[best]) best = i;  // tie keeps the lowest id
    return best;
}

struct Builder {
    const std::vector<RuleSample>& data;
    int max_depth, min_leaf, classes;
    RuleTree& tree;

    int build(std::vector<int> idx, int depth) {
        std::vector<int> counts(classes, 0);
        for (int i : idx) counts[data[i].action] += 1;
        TreeNode node;
        node.n = static_cast<int>(idx.size());
        node.class_counts = counts;
        node.label = majority(counts);
        const double node_gini = gini(counts, node.n);

        bool can_split = depth < max_depth && node.n >= 2 * min_leaf && node_gini > 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;
        // zero-gain splits are allowed (xor needs them); children are always
        // strictly smaller so recursion terminates
        double best_impurity = std::numeric_limits<double>::infinity();
        if (can_split) {
            for (int f = 0; f < 3; ++f) {
                std::vector<double> vals;
                vals.reserve(idx.size());
                for (int i : idx) vals.push_back(data[i].ttc.values()[f]);
                std::sort(vals.begin(), vals.end());
                vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
                for (size_t t = 0; t + 1 < vals.size(); ++t) {
                    double thr = (vals[t] + vals[t + 1]) / 2.0;
                    std::vector<int> lc(classes, 0), rc(classes, 0);
                    int ln = 0, rn = 0;
                    for (int i : idx) {
                        if (data[i].ttc.values()[f] < thr) { lc[data[i].action] += 1; ++ln; }
                        else { rc[data[i].action] += 1; ++rn; }
                    }
                    if (ln < min_leaf || rn < min_leaf) continue;
                    double imp = (ln * gini(lc, ln) + rn * gini(rc, rn)) / node.n;
                    if (imp < best_impurity) {  // first hit wins ties: lowest feature, threshold
                        best_impurity = imp;
                        best_feature = f;
                        best_threshold = thr;
                    }
                }
            }
        }
        int my_index = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(node);
        if (best_feature >= 0) {
            std::vector<int> li, ri;
            for (int i : idx)
                (data[i].ttc.values()[best_feature] < best_threshold ? li : ri).push_back(i);
            int l = build(std::move(li), depth + 1);
            int r = build(std::move(ri), depth + 1);
            tree.nodes[my_index].feature = best_feature;
            tree.nodes[my_index].threshold = best_threshold;
            tree.nodes[my_index].left = l;
            tree.nodes[my_index].right = r;
        }
        return my_index;
    }
};

}  // namespace

RuleTree fit_tree(const std::vector<RuleSample>& data, int max_depth, int min_leaf, uint64_t seed,
                  std::vector<std::string> feature_names, std::vector<std::string> action_names) {
    (void)seed;  // the fit is deterministic; kept for interface stability
    if (min_leaf < 1) throw std::invalid_argument("fit_tree: min_leaf must be >= 1");
    if (max_depth < 0) throw std::invalid_argument("fit_tree: max_depth must be >= 0");
    if (static_cast<int>(data.size()) < min_leaf)
        throw std::invalid_argument("fit_tree: dataset smaller than min_leaf");
    int classes = 0;
    for (const auto& s : data) {
        if (s.action < 0) throw std::invalid_argument("fit_tree: negative action label");
        classes = std::max(classes, s.action + 1);
    }
    RuleTree tree;
    tree.max_depth = max_depth;
    tree.min_leaf = min_leaf;
    tree.feature_names = feature_names.empty() ? kTtcNames : std::move(feature_names);
    if (action_names.empty()) {
        for (int a = 0; a < classes; ++a) tree.action_names.push_back("action" + std::to_string(a));
    } else {
        tree.action_names = std::move(action_names);
    }
    std::vector<int> idx(data.size());
    for (size_t i = 0; i < data.size(); ++i) idx[i] = static_cast<int>(i);
    Builder b{data, max_depth, min_leaf, classes, tree};
    b.build(std::move(idx), 0);
    return tree;
}

int RuleTree::predict(const std::array<double, 3>& x) const {
    int node = 0;
    while (nodes[node].feature >= 0)
        node = x[nodes[node].feature] < nodes[node].threshold ? nodes[node].left
                                                              : nodes[node].right;
    return nodes[node].label;
}

double RuleTree::training_accuracy(const std::vector<RuleSample>& data) const {
    if (data.empty()) return 0.0;
    int ok = 0;
    for (const auto& s : data) ok += predict(s.ttc.values()) == s.action ? 1 : 0;
    return static_cast<double>(ok) / data.size();
}

std::string RuleTree::to_json() const {
    nlohmann::json j;
    j["max_depth"] = max_depth;
    j["min_leaf"] = min_leaf;
    j["feature_names"] = feature_names;
    j["action_names"] = action_names;
    nlohmann::json ns = nlohmann::json::array();
    for (const auto& n : nodes) {
        ns.push_back({{"feature", n.feature},
                      {"threshold", n.threshold},
                      {"left", n.left},
                      {"right", n.right},
                      {"label", n.label},
                      {"n", n.n},
                      {"class_counts", n.class_counts}});
    }
    j["nodes"] = ns;
    return j.dump(2);
}

namespace {

void collect_rules(const RuleTree& t, int node, std::vector<std::string>& conds,
                   std::ostringstream& out) {
    const TreeNode& n = t.nodes[node];
    if (n.feature < 0) {
        out << "IF ";
        if (conds.empty()) {
            out << "true";
        } else {
            for (size_t i = 0; i < conds.size(); ++i) {
                if (i) out << " AND ";
                out << conds[i];
            }
        }
        out << " THEN Action = \"" << t.action_names[n.label] << "\" (n=" << n.n << ")\n";
        return;
    }
    std::ostringstream thr;
    thr << std::fixed << std::setprecision(2) << n.threshold;
    conds.push_back(t.feature_names[n.feature] + " < " + thr.str());
    collect_rules(t, n.left, conds, out);
    conds.back() = t.feature_names[n.feature] + " >= " + thr.str();
    collect_rules(t, n.right, conds, out);
    conds.pop_back();
}

}  // namespace

std::string format_rules(const RuleTree& tree) {
    std::ostringstream out;
    std::vector<std::string> conds;
    collect_rules(tree, 0, conds, out);
    return out.str();
}

std::vector<ParsedRule> parse_rules(const std::string& text,
                                    const std::vector<std::string>& feature_names) {
    const std::vector<std::string>& names = feature_names.empty() ? kTtcNames : feature_names;
    std::vector<ParsedRule> rules;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t if_pos = line.find("IF ");
        size_t then_pos = line.find(" THEN Action = \"");
        if (if_pos != 0 || then_pos == std::string::npos)
            throw std::invalid_argument("unparseable rule line: " + line);
        ParsedRule rule;
        std::string conds = line.substr(3, then_pos - 3);
        size_t tail = then_pos + std::strlen(" THEN Action = \"");
        size_t quote = line.find('"', tail);
        rule.action = line.substr(tail, quote - tail);
        size_t npos = line.find("(n=", quote);
        if (npos != std::string::npos) rule.support = std::stoi(line.substr(npos + 3));
        if (conds != "true") {
            std::vector<std::string> parts;
            size_t pos = 0;
            while ((pos = conds.find(" AND ")) != std::string::npos) {
                parts.push_back(conds.substr(0, pos));
                conds.erase(0, pos + 5);
            }
            parts.push_back(conds);
            for (const auto& p : parts) {
                RuleCondition c;
                size_t lt = p.find(" < ");
                size_t ge = p.find(" >= ");
                std::string fname;
                if (lt != std::string::npos) {
                    c.less = true;
                    fname = p.substr(0, lt);
                    c.threshold = std::stod(p.substr(lt + 3));
                } else if (ge != std::string::npos) {
                    c.less = false;
                    fname = p.substr(0, ge);
                    c.threshold = std::stod(p.substr(ge + 4));
                } else {
                    throw std::invalid_argument("unparseable condition: " + p);
                }
                auto it = std::find(names.begin(), names.end(), fname);
                if (it == names.end()) throw std::invalid_argument("unknown feature: " + fname);
                c.feature = static_cast<int>(it - names.begin());
                rule.conditions.push_back(c);
            }
        }
        rules.push_back(std::move(rule));
    }
    return rules;
}

std::string evaluate_rules(const std::vector<ParsedRule>& rules, const std::array<double, 3>& x) {
    for (const auto& r : rules) {
        bool match = true;
        for (const auto& c : r.conditions) {
            bool ok = c.less ? x[c.feature] < c.threshold : x[c.feature] >= c.threshold;
            if (!ok) { match = false; break; }
        }
        if (match) return r.action;
    }
    throw std::logic_error("no rule matched; leaf regions should cover the space");
}

// ---------------------------------------------------------------------------
// boundary profile

BoundaryProfile ttc_boundary_profile(const StudentModel& student, const RasterPolicy& teacher,
                                     const std::vector<float>& base_sigma, int target_action,
                                     const EnvConfig& env_cfg, const CFConfig& cf_cfg,
                                     double gap_lo, double gap_hi, int points) {
    if (env_cfg.kind != EnvKind::Highway)
        throw std::invalid_argument("ttc_boundary_profile: highway only");
    if (points < 2) throw std::invalid_argument("ttc_boundary_profile: need >= 2 sweep points");
    TtcFeatures base_ttc = compute_ttc(base_sigma, env_cfg);
    if (base_ttc.pv_forward < 0)
        throw std::invalid_argument("ttc_boundary_profile: base state has no lead vehicle");
    const size_t dx_index = static_cast<size_t>(base_ttc.pv_forward) * 4;

    BoundaryProfile profile;
    double best_student = 0.0, best_teacher = 0.0;
    bool have_student = false, have_teacher = false;
    double best_student_dist = 0.0, best_teacher_dist = 0.0;

    for (int i = 0; i < points; ++i) {
        double gap = gap_lo + (gap_hi - gap_lo) * i / (points - 1);
        std::vector<float> sigma = base_sigma;
        sigma[dx_index] = static_cast<float>((gap + env_cfg.vehicle_length) / env_cfg.x_range);

        BoundaryPoint pt;
        pt.gap = gap;
        if (student.greedy(sigma) == target_action) continue;  // already across the boundary
        CFConfig cfg = cf_cfg;
        if (cfg.features.empty()) cfg.features = feature_info(env_cfg, sigma);
        CFResult r = generate_cf(student, sigma, target_action, cfg);
        pt.converged = r.converged;
        pt.dist = r.dist;
        if (r.converged) {
            validate_cf(teacher, student, r, env_cfg);
            pt.valid = r.validity == 1;
            pt.ttc_forward_cf = compute_ttc(r.sigma_cf, env_cfg).forward;
            if (!have_student || r.dist < best_student_dist) {
                have_student = true;
                best_student_dist = r.dist;
                best_student = pt.ttc_forward_cf;
            }
            if (pt.valid && (!have_teacher || r.dist < best_teacher_dist)) {
                have_teacher = true;
                best_teacher_dist = r.dist;
                best_teacher = pt.ttc_forward_cf;
            }
        }
        profile.points.push_back(pt);
    }
    if (have_student) profile.student_ttc = best_student;
    if (have_teacher) profile.teacher_ttc = best_teacher;
    return profile;
}

}  // namespace cfrl
