#pragma once

#include "cfrl/cf.hpp"

namespace cfrl {

constexpr double kDefaultEpsPix = 1.0 / 255.0;  // one 8-bit quantisation level

// Percentage of pixels with |delta| > eps_pix, averaged over the K frames.
double sparsity_pct(const RasterObs& a, const RasterObs& b, double eps_pix = kDefaultEpsPix);

struct ProximityValue {
    double mean_abs = 0.0;       // mean |delta| over modified pixels, 0 when none
    double l1_per_frame = 0.0;   // sum |delta| over modified pixels / frame count
    int modified_pixels = 0;
};

ProximityValue proximity(const RasterObs& a, const RasterObs& b, double eps_pix = kDefaultEpsPix);

// 100 x mean validity flag; NaN for an empty list.
double validity_rate(const std::vector<CFResult>& results);

struct ActionBreakdown {
    int target_action = 0;
    int n = 0;
    int n_valid = 0;
};

struct MetricReport {
    double validity_pct = 0.0;
    double sparsity_pct = 0.0;       // mean over valid CFs
    double proximity_mean_abs = 0.0; // mean over valid CFs
    double proximity_l1_per_frame = 0.0;
    int n_queries = 0;
    int n_rendered = 0;
    int n_valid = 0;
    double eps_pix = kDefaultEpsPix;
    std::vector<ActionBreakdown> per_action;
    std::string env;
    std::string config_echo;  // JSON text of the generating configuration
    std::string definitions;  // what each column means, fixed text

    std::string to_json() const;
    static MetricReport from_json(const std::string& text);
    std::string to_text() const;  // aligned Vld / Spr / Prx table
};

MetricReport build_report(const std::vector<CFResult>& results, const EnvConfig& env_cfg,
                          const std::string& config_echo, double eps_pix = kDefaultEpsPix);

struct LambdaRow {
    double lambda = 0.0;  // normalised weight
    double validity_pct = 0.0;
    double sparsity_pct = 0.0;
    double proximity_mean_abs = 0.0;
    int n = 0;
};

// Runs the batch once per lambda_max setting and tabulates Vld/Spr/Prx.
std::vector<LambdaRow> lambda_ablation(const std::vector<CFQuery>& queries,
                                       const RasterPolicy& teacher, const StudentModel& student,
                                       const EnvConfig& env_cfg, const CFConfig& base_cfg,
                                       const std::vector<double>& lambda_set);

std::string lambda_table_text(const std::vector<LambdaRow>& rows);

}  // namespace cfrl
