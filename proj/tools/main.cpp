#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

#include "cfrl/explain.hpp"
#include "cfrl/image.hpp"
#include "cfrl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfrl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonOpts {
    std::vector<std::string> config_files;
    std::vector<std::string> overrides;
    uint64_t seed = 1;

    KeyValueConfig load() const {
        KeyValueConfig cfg;
        for (const auto& f : config_files) cfg.layer(KeyValueConfig::from_file(f));
        for (const auto& o : overrides) cfg.set_override(o);
        if (!cfg.has("seed")) cfg.set("seed", std::to_string(seed));
        return cfg;
    }
};

void add_common(CLI::App* app, CommonOpts& o) {
    app->add_option("--config", o.config_files, "layered key=value config files")
        ->check(CLI::ExistingFile);
    app->add_option("--set", o.overrides, "override: key=value");
    app->add_option("--seed", o.seed, "root seed");
}

EnvConfig env_from(const KeyValueConfig& cfg, const std::string& env_flag) {
    KeyValueConfig merged = cfg;
    if (!env_flag.empty()) merged.set("env.kind", env_flag);
    return EnvConfig::from_kv(merged);
}

int run_train_teacher(const CommonOpts& common, const std::string& env_flag,
                      const std::string& algo_flag, const std::string& out) {
    KeyValueConfig cfg = common.load();
    EnvConfig env_cfg = env_from(cfg, env_flag);
    Algo algo = algo_from(algo_flag.empty() ? cfg.get_str("teacher.algo", "dqn") : algo_flag);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    log_json(&std::cerr, "train-teacher", "start",
             env_kind_name(env_cfg.kind) + "/" + algo_name(algo));
    TrainResult tr = algo == Algo::DQN
                         ? train_dqn(env_cfg, DqnHyper::from_kv(cfg), seed, &std::cerr)
                         : train_a2c(env_cfg, A2cHyper::from_kv(cfg), seed, &std::cerr);
    save_teacher(out, tr.model);
    EvalResult ev = evaluate_policy(tr.model, env_cfg, 10, 1, derive_seed(seed, 9001));
    EvalResult rnd = evaluate_random(env_cfg, 10, 1, derive_seed(seed, 9001));
    std::cout << "saved " << out << "\n";
    std::cout << "greedy mean reward: " << ev.mean_reward << "  random baseline: "
              << rnd.mean_reward << "\n";
    return kExitOk;
}

int run_distill(const CommonOpts& common, const std::string& teacher_path,
                const std::string& env_flag, const std::string& loss, double tau, int n,
                const std::string& out, const std::string& dataset_out) {
    KeyValueConfig cfg = common.load();
    if (!loss.empty()) cfg.set("distill.loss", loss);
    if (tau > 0) cfg.set("distill.tau", std::to_string(tau));
    if (n > 0) cfg.set("distill.n", std::to_string(n));
    EnvConfig env_cfg = env_from(cfg, env_flag);
    DistillParams dp = DistillParams::from_kv(cfg);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));

    TeacherModel teacher = load_teacher(teacher_path);
    log_json(&std::cerr, "distill", "collect", std::to_string(dp.n) + " records");
    DistillDataset data = collect_dataset(teacher, env_cfg, dp.n, derive_seed(seed, 200), dp.eps_mix);
    if (!dataset_out.empty()) save_dataset(dataset_out, data);
    log_json(&std::cerr, "distill", "train", dp.loss);
    StudentTrainResult st = train_student(data, loss_from(dp.loss), dp.resolved_tau(teacher.algo),
                                          dp.epochs, dp.batch, dp.lr, derive_seed(seed, 201),
                                          dp.hidden, env_cfg.kind);
    save_student(out, st.model);
    FidelityReport rep = fidelity(teacher, st.model, env_cfg,
                                  static_cast<int>(cfg.get_int("eval.trials", 10)),
                                  static_cast<int>(cfg.get_int("eval.episodes", 2)),
                                  derive_seed(seed, 202));
    std::cout << "saved " << out << "\n";
    std::cout << "teacher score " << rep.teacher_score << ", student score " << rep.student_score;
    if (rep.relative_defined) std::cout << ", relative " << rep.relative_pct << "%";
    std::cout << ", agreement " << rep.agreement_pct << "% over " << rep.agreement_states
              << " states\n";
    return kExitOk;
}

int run_gen_cf(const CommonOpts& common, const std::string& student_path,
               const std::string& teacher_path, const std::string& env_flag,
               const std::string& query_file, int target_action, int queries, double lambda_max,
               const std::string& out, const std::string& panel_dir) {
    KeyValueConfig cfg = common.load();
    EnvConfig env_cfg = env_from(cfg, env_flag);
    CFConfig cf_cfg = CFConfig::from_kv(cfg);
    if (lambda_max > 0) cf_cfg.lambda_max = lambda_max;
    cf_cfg.validate(env_cfg.feature_dim());
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));

    TeacherModel teacher = load_teacher(teacher_path);
    StudentModel student = load_student(student_path);

    std::vector<CFQuery> query_list;
    if (!query_file.empty()) {
        std::ifstream in(query_file);
        if (!in) throw IoError("cannot open query file: " + query_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            CFQuery q;
            q.sigma = j.at("objects").get<std::vector<float>>();
            q.target_action = j.contains("target_action") ? j.at("target_action").get<int>()
                                                          : target_action;
            if (q.target_action < 0) {
                std::vector<float> v = student.values(q.sigma);
                int a = argmax(v);
                v[a] = -std::numeric_limits<float>::infinity();
                q.target_action = argmax(v);
            }
            query_list.push_back(std::move(q));
        }
    } else {
        query_list = sample_queries(teacher, student, env_cfg, queries, target_action,
                                    derive_seed(seed, 300));
    }
    log_json(&std::cerr, "gen-cf", "start", std::to_string(query_list.size()) + " queries");
    BatchSummary summary;
    std::vector<CFResult> results = run_batch(query_list, teacher, student, env_cfg, cf_cfg,
                                              &summary);
    write_cf_results(out, results);
    if (!panel_dir.empty()) {
        fs::create_directories(panel_dir);
        int written = 0;
        for (const auto& r : results) {
            if (r.validity != 1) continue;
            RasterObs s = render_from_objects(r.sigma, env_cfg);
            RasterObs s_cf = render_from_objects(r.sigma_cf, env_cfg);
            write_cf_panel_png(panel_dir + "/panel_" + std::to_string(written) + ".png", s, s_cf);
            if (++written >= 16) break;
        }
    }
    std::cout << "wrote " << results.size() << " results to " << out << "\n";
    std::cout << "validity " << summary.validity_pct << "%, convergence " << summary.convergence_pct
              << "%, mean dist " << summary.mean_dist << "\n";
    return kExitOk;
}

int run_eval_metrics(const CommonOpts& common, const std::string& cf_file,
                     const std::string& env_flag, const std::string& out,
                     const std::string& text_out) {
    KeyValueConfig cfg = common.load();
    EnvConfig env_cfg = env_from(cfg, env_flag);
    std::vector<CFResult> results = read_cf_results(cf_file);
    MetricReport rep = build_report(results, env_cfg, "");
    write_text_file(out, rep.to_json() + "\n");
    if (!text_out.empty()) write_text_file(text_out, rep.to_text());
    std::cout << rep.to_text();
    return kExitOk;
}

int run_extract_rules(const CommonOpts& common, const std::string& cf_file,
                      const std::string& env_flag, int max_depth, int min_leaf,
                      const std::string& out, const std::string& json_out) {
    KeyValueConfig cfg = common.load();
    EnvConfig env_cfg = env_from(cfg, env_flag);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    std::vector<CFResult> results = read_cf_results(cf_file);
    RuleDatasetResult ds = build_rule_dataset(results, env_cfg);
    if (static_cast<int>(ds.samples.size()) < min_leaf)
        throw std::runtime_error("not enough valid counterfactuals for rule extraction (" +
                                 std::to_string(ds.samples.size()) + " valid, skipped " +
                                 std::to_string(ds.skipped_invalid) + ")");
    std::vector<std::string> actions;
    for (int a = 0; a < env_cfg.action_count(); ++a)
        actions.push_back(action_name(env_cfg.kind, a));
    RuleTree tree = fit_tree(ds.samples, max_depth, min_leaf, derive_seed(seed, 400), {}, actions);
    std::string rules = format_rules(tree);
    write_text_file(out, rules);
    if (!json_out.empty()) write_text_file(json_out, tree.to_json() + "\n");
    std::cout << rules;
    return kExitOk;
}

int run_render(const CommonOpts& common, const std::string& env_flag, int steps,
               const std::string& out_dir, const std::string& traj_out) {
    KeyValueConfig cfg = common.load();
    EnvConfig env_cfg = env_from(cfg, env_flag);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    fs::create_directories(out_dir);
    EnvSession session(env_cfg, seed);
    std::mt19937_64 rng(derive_seed(seed, 5));
    std::uniform_int_distribution<int> pick(0, env_cfg.action_count() - 1);
    std::ofstream traj;
    if (!traj_out.empty()) traj.open(traj_out);
    for (int t = 0; t < steps; ++t) {
        const RasterObs& obs = session.raster();
        std::vector<float> frame = obs.frame(obs.k - 1);
        write_ppm(out_dir + "/frame_" + std::to_string(t) + ".ppm", frame, obs.h, obs.w);
        write_png_gray(out_dir + "/frame_" + std::to_string(t) + ".png", frame, obs.h, obs.w);
        int a = pick(rng);
        StepOut res = session.step(a);
        if (traj.is_open())
            traj << trajectory_record(session.state().tick, a, res.reward, session.objects(),
                                      res.done)
                 << "\n";
        if (res.done) session.reset(derive_seed(seed, 6 + t));
    }
    std::cout << "wrote " << steps << " frames to " << out_dir << "\n";
    return kExitOk;
}

int run_pipeline_cmd(const CommonOpts& common, const std::string& out_dir) {
    KeyValueConfig cfg = common.load();
    PipelineResult res = run_pipeline(cfg, out_dir, &std::cerr);
    for (const auto& s : res.stages)
        std::cout << s.name << (s.cached ? " [cached]" : " [run]") << "\n";
    std::cout << "cf results: " << res.cf_count << ", rules: " << res.rule_count << "\n";
    std::cout << "manifest: " << res.manifest_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"counterfactual explanations for RL policies via distilled students"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string env_flag, algo_flag, out, teacher_path, student_path, cf_file, query_file;
    std::string dataset_out, panel_dir, text_out, json_out, traj_out, out_dir = "out";
    std::string loss;
    double tau = -1, lambda_max = -1;
    int n = -1, target_action = -1, queries = 200, max_depth = 3, min_leaf = 5, steps = 16;

    auto* t = app.add_subcommand("train-teacher", "train a DQN or A2C teacher on raster input");
    add_common(t, common);
    t->add_option("--env", env_flag, "highway|pong");
    t->add_option("--algo", algo_flag, "dqn|a2c");
    t->add_option("--out", out, "model output path")->required();

    auto* d = app.add_subcommand("distill", "collect a dataset and train the student");
    add_common(d, common);
    d->add_option("--teacher", teacher_path, "teacher model")->required()->check(CLI::ExistingFile);
    d->add_option("--env", env_flag, "highway|pong");
    d->add_option("--loss", loss, "kl|nll|mse");
    d->add_option("--tau", tau, "KL temperature (default per algorithm)");
    d->add_option("--n", n, "dataset size");
    d->add_option("--out", out, "student output path")->required();
    d->add_option("--dataset-out", dataset_out, "also save the dataset");

    auto* g = app.add_subcommand("gen-cf", "generate and validate counterfactuals");
    add_common(g, common);
    g->add_option("--student", student_path)->required()->check(CLI::ExistingFile);
    g->add_option("--teacher", teacher_path)->required()->check(CLI::ExistingFile);
    g->add_option("--env", env_flag, "highway|pong");
    g->add_option("--query", query_file, "JSONL query states ({\"objects\": [...]})");
    g->add_option("--target-action", target_action, "fixed target (-1 = student runner-up)");
    g->add_option("--queries", queries, "sampled query count when --query is absent");
    g->add_option("--lambda-max", lambda_max, "weight in (0,1)");
    g->add_option("--out", out)->required();
    g->add_option("--panels", panel_dir, "directory for side-by-side PNG pairs");

    auto* m = app.add_subcommand("eval-metrics", "validity/sparsity/proximity report");
    add_common(m, common);
    m->add_option("--cf", cf_file, "cf.jsonl")->required()->check(CLI::ExistingFile);
    m->add_option("--env", env_flag, "highway|pong");
    m->add_option("--out", out, "report JSON path")->required();
    m->add_option("--text-out", text_out, "aligned text table path");

    auto* r = app.add_subcommand("extract-rules", "CART if-then rules over TTC features");
    add_common(r, common);
    r->add_option("--cf", cf_file, "cf.jsonl")->required()->check(CLI::ExistingFile);
    r->add_option("--env", env_flag, "highway only");
    r->add_option("--max-depth", max_depth);
    r->add_option("--min-leaf", min_leaf);
    r->add_option("--out", out, "rules text path")->required();
    r->add_option("--json-out", json_out, "tree dump path");

    auto* rd = app.add_subcommand("render", "roll out randomly and export frames");
    add_common(rd, common);
    rd->add_option("--env", env_flag, "highway|pong");
    rd->add_option("--steps", steps);
    rd->add_option("--out-dir", out_dir)->required();
    rd->add_option("--trajectory", traj_out, "JSONL trajectory path");

    auto* p = app.add_subcommand("pipeline", "run all four steps end to end with caching");
    add_common(p, common);
    p->add_option("--out-dir", out_dir, "artifact directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (t->parsed()) return run_train_teacher(common, env_flag, algo_flag, out);
        if (d->parsed()) return run_distill(common, teacher_path, env_flag, loss, tau, n, out,
                                            dataset_out);
        if (g->parsed()) return run_gen_cf(common, student_path, teacher_path, env_flag, query_file,
                                           target_action, queries, lambda_max, out, panel_dir);
        if (m->parsed()) return run_eval_metrics(common, cf_file, env_flag, out, text_out);
        if (r->parsed()) return run_extract_rules(common, cf_file, env_flag, max_depth, min_leaf,
                                                  out, json_out);
        if (rd->parsed()) return run_render(common, env_flag, steps, out_dir, traj_out);
        if (p->parsed()) return run_pipeline_cmd(common, out_dir);
    } catch (const ConfigError& e) {
        log_json(&std::cerr, "cli", "config-error", e.what());
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const PipelineError& e) {
        log_json(&std::cerr, e.stage, "failed", e.what());
        std::cerr << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        log_json(&std::cerr, "cli", "failed", e.what());
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
    return kExitOk;
}
