#pragma once

#include "cfrl/cf.hpp"

namespace cfrl {

struct TtcFeatures {
    double left = 0, forward = 0, right = 0;  // seconds, capped at ttc_max
    int pv_left = -1, pv_forward = -1, pv_right = -1;  // object-list slot index or -1

    std::array<double, 3> values() const { return {left, forward, right}; }
};

constexpr double kTtcMax = 20.0;

// Time to collision toward the nearest closing vehicle ahead in the ego's
// left/current/right lane. Highway object lists only.
TtcFeatures compute_ttc(const std::vector<float>& sigma, const EnvConfig& cfg,
                        double ttc_max = kTtcMax);

struct RuleSample {
    TtcFeatures ttc;
    int action = 0;
};

struct RuleDatasetResult {
    std::vector<RuleSample> samples;
    int skipped_invalid = 0;
};

// Valid counterfactuals mapped to (TTC(sigma_cf), teacher action on the CF).
RuleDatasetResult build_rule_dataset(const std::vector<CFResult>& results, const EnvConfig& cfg,
                                     double ttc_max = kTtcMax);

// ---------------------------------------------------------------------------
// CART over the TTC features

struct TreeNode {
    int feature = -1;      // -1 for leaves
    double threshold = 0;
    int left = -1, right = -1;
    int label = -1;
    int n = 0;
    std::vector<int> class_counts;
};

struct RuleTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    int max_depth = 0, min_leaf = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> action_names;

    int predict(const std::array<double, 3>& x) const;
    double training_accuracy(const std::vector<RuleSample>& data) const;
    std::string to_json() const;
};

// Gini CART with midpoint thresholds and deterministic tie-breaking (lowest
// feature index, then lowest threshold). `seed` is accepted for interface
// symmetry; the fit itself is deterministic.
RuleTree fit_tree(const std::vector<RuleSample>& data, int max_depth, int min_leaf, uint64_t seed,
                  std::vector<std::string> feature_names = {},
                  std::vector<std::string> action_names = {});

// One "IF a AND b THEN Action = "X" (n=k)" line per leaf.
std::string format_rules(const RuleTree& tree);

struct RuleCondition {
    int feature = 0;
    bool less = true;  // feature < threshold vs feature >= threshold
    double threshold = 0;
};

struct ParsedRule {
    std::vector<RuleCondition> conditions;
    std::string action;
    int support = 0;
};

std::vector<ParsedRule> parse_rules(const std::string& text,
                                    const std::vector<std::string>& feature_names);
// First matching rule's action; leaf regions are disjoint so order is moot.
std::string evaluate_rules(const std::vector<ParsedRule>& rules, const std::array<double, 3>& x);

// ---------------------------------------------------------------------------
// decision-boundary probing

struct BoundaryPoint {
    double gap = 0;          // metres of bumper gap given to the lead vehicle
    bool converged = false;  // student flipped
    bool valid = false;      // teacher agreed (validated CF)
    double dist = 0;
    double ttc_forward_cf = 0;
};

struct BoundaryProfile {
    std::vector<BoundaryPoint> points;
    // TTC_forward of the minimum-distance flipping / valid CF; unset = unbounded
    std::optional<double> student_ttc;
    std::optional<double> teacher_ttc;
};

// Sweeps the lead-vehicle gap of `base_sigma` and generates a counterfactual
// toward `target_action` at each setting.
BoundaryProfile ttc_boundary_profile(const StudentModel& student, const RasterPolicy& teacher,
                                     const std::vector<float>& base_sigma, int target_action,
                                     const EnvConfig& env_cfg, const CFConfig& cf_cfg,
                                     double gap_lo = 8.0, double gap_hi = 40.0, int points = 9);

}  // namespace cfrl
