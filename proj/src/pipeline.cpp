#include "cfrl/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfrl/explain.hpp"
#include "cfrl/image.hpp"

namespace cfrl {

namespace fs = std::filesystem;
using nlohmann::json;

void log_json(std::ostream* out, const std::string& stage, const std::string& event,
              const std::string& detail) {
    if (!out) return;
    json j;
    j["stage"] = stage;
    j["event"] = event;
    if (!detail.empty()) j["detail"] = detail;
    (*out) << j.dump() << "\n";
}

DistillParams DistillParams::from_kv(const KeyValueConfig& kv) {
    DistillParams p;
    p.loss = kv.get_str("distill.loss", p.loss);
    p.tau = kv.get_double("distill.tau", p.tau);
    p.n = static_cast<int>(kv.get_int("distill.n", p.n));
    p.eps_mix = kv.get_double("distill.eps_mix", p.eps_mix);
    p.epochs = static_cast<int>(kv.get_int("distill.epochs", p.epochs));
    p.batch = static_cast<int>(kv.get_int("distill.batch", p.batch));
    p.lr = kv.get_double("distill.lr", p.lr);
    p.holdout = kv.get_double("distill.holdout", p.holdout);
    p.hidden = static_cast<int>(kv.get_int("distill.hidden", p.hidden));
    (void)loss_from(p.loss);
    if (p.n < 1 || p.epochs < 1 || p.batch < 1) throw ConfigError("distill counters must be positive");
    if (p.holdout < 0 || p.holdout >= 1) throw ConfigError("distill.holdout must be in [0,1)");
    return p;
}

double DistillParams::resolved_tau(Algo algo) const {
    if (tau > 0) return tau;
    return algo == Algo::DQN ? 0.01 : 0.7;
}

uint64_t DistillParams::digest() const {
    std::ostringstream s;
    s << loss << ' ' << tau << ' ' << n << ' ' << eps_mix << ' ' << epochs << ' ' << batch << ' '
      << lr << ' ' << holdout << ' ' << hidden;
    return fnv1a64(s.str());
}

namespace {

struct Manifest {
    json j;
    std::string path;

    static Manifest open(const std::string& p) {
        Manifest m;
        m.path = p;
        if (fs::exists(p)) {
            try {
                m.j = json::parse(read_text_file(p));
            } catch (const std::exception&) {
                m.j = json::object();  // unreadable manifest: rebuild everything
            }
        } else {
            m.j = json::object();
        }
        if (!m.j.contains("stages")) m.j["stages"] = json::object();
        return m;
    }

    bool stage_fresh(const std::string& stage, const std::string& inputs_digest,
                     const std::vector<std::string>& outputs) const {
        if (!j["stages"].contains(stage)) return false;
        const json& s = j["stages"][stage];
        if (s.value("inputs", "") != inputs_digest) return false;
        if (!s.contains("outputs")) return false;
        for (const auto& o : outputs) {
            if (!s["outputs"].contains(o)) return false;
            if (!fs::exists(o)) return false;
            if (hex64(file_digest(o)) != s["outputs"][o].get<std::string>()) return false;
        }
        return true;
    }

    void record(const std::string& stage, const std::string& inputs_digest,
                const std::vector<std::string>& outputs) {
        json s;
        s["inputs"] = inputs_digest;
        s["outputs"] = json::object();
        for (const auto& o : outputs) s["outputs"][o] = hex64(file_digest(o));
        j["stages"][stage] = s;
    }

    void save() {
        j["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
        write_text_file(path, j.dump(2) + "\n");
    }
};

}  // namespace

PipelineResult run_pipeline(const KeyValueConfig& cfg, const std::string& out_dir,
                            std::ostream* log) {
    fs::create_directories(out_dir);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    EnvConfig env_cfg = EnvConfig::from_kv(cfg);
    const Algo algo = algo_from(cfg.get_str("teacher.algo", "dqn"));
    DistillParams dp = DistillParams::from_kv(cfg);
    CFConfig cf_cfg = CFConfig::from_kv(cfg);
    cf_cfg.validate(env_cfg.feature_dim());
    const int cf_queries = static_cast<int>(cfg.get_int("cf.queries", 200));
    const int cf_target = static_cast<int>(cfg.get_int("cf.target_action", -1));
    const int panels = static_cast<int>(cfg.get_int("cf.panels", 4));
    const int rules_depth = static_cast<int>(cfg.get_int("rules.max_depth", 3));
    const int rules_min_leaf = static_cast<int>(cfg.get_int("rules.min_leaf", 5));

    PipelineResult result;
    Manifest manifest = Manifest::open(out_dir + "/manifest.json");
    manifest.j["root_seed"] = seed;
    manifest.j["config"] = cfg.canonical_text();
    manifest.j["env_digest"] = hex64(env_cfg.digest());

    const std::string teacher_path = out_dir + "/teacher.bin";
    const std::string dataset_path = out_dir + "/dataset.bin";
    const std::string student_path = out_dir + "/student.bin";
    const std::string cf_path = out_dir + "/cf.jsonl";
    const std::string report_json = out_dir + "/report.json";
    const std::string report_txt = out_dir + "/report.txt";
    const std::string rules_txt = out_dir + "/rules.txt";
    const std::string rules_json = out_dir + "/rules.json";
    const std::string train_log = out_dir + "/teacher_train.jsonl";

    auto run_stage = [&](const std::string& name, const std::string& inputs,
                         const std::vector<std::string>& outputs, auto&& body) {
        StageStatus st;
        st.name = name;
        st.outputs = outputs;
        if (manifest.stage_fresh(name, inputs, outputs)) {
            st.cached = true;
            log_json(log, name, "cached");
        } else {
            log_json(log, name, "start");
            try {
                body();
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw PipelineError(name, e.what());
            }
            manifest.record(name, inputs, outputs);
            manifest.save();
            log_json(log, name, "done");
        }
        result.stages.push_back(st);
    };

    // 1. teacher
    std::ostringstream teacher_inputs;
    teacher_inputs << hex64(env_cfg.digest()) << ' ' << algo_name(algo) << ' ' << seed << ' ';
    if (algo == Algo::DQN)
        teacher_inputs << hex64(DqnHyper::from_kv(cfg).digest());
    else
        teacher_inputs << hex64(A2cHyper::from_kv(cfg).digest());
    run_stage("train-teacher", teacher_inputs.str(), {teacher_path}, [&] {
        std::ofstream tlog(train_log);
        TrainResult tr = algo == Algo::DQN
                             ? train_dqn(env_cfg, DqnHyper::from_kv(cfg), seed, &tlog)
                             : train_a2c(env_cfg, A2cHyper::from_kv(cfg), seed, &tlog);
        save_teacher(teacher_path, tr.model);
    });

    // 2. distill
    std::string distill_inputs = hex64(file_digest(teacher_path)) + " " + hex64(dp.digest());
    run_stage("distill", distill_inputs, {dataset_path, student_path}, [&] {
        TeacherModel teacher = load_teacher(teacher_path);
        DistillDataset data = collect_dataset(teacher, env_cfg, dp.n, derive_seed(seed, 200),
                                              dp.eps_mix);
        json prov = json::parse(data.provenance);
        prov["teacher_digest"] = hex64(file_digest(teacher_path));
        data.provenance = prov.dump();
        save_dataset(dataset_path, data);
        double tau = dp.resolved_tau(teacher.algo);
        StudentTrainResult st = train_student(data, loss_from(dp.loss), tau, dp.epochs, dp.batch,
                                              dp.lr, derive_seed(seed, 201), dp.hidden,
                                              env_cfg.kind);
        save_student(student_path, st.model);
    });

    // 3. gen-cf
    std::ostringstream cf_inputs;
    cf_inputs << hex64(file_digest(student_path)) << ' ' << hex64(file_digest(teacher_path)) << ' '
              << hex64(cf_cfg.digest()) << ' ' << cf_queries << ' ' << cf_target << ' ' << seed;
    run_stage("gen-cf", cf_inputs.str(), {cf_path}, [&] {
        TeacherModel teacher = load_teacher(teacher_path);
        StudentModel student = load_student(student_path);
        std::vector<CFQuery> queries = sample_queries(teacher, student, env_cfg, cf_queries,
                                                      cf_target, derive_seed(seed, 300));
        BatchSummary summary;
        std::vector<CFResult> results = run_batch(queries, teacher, student, env_cfg, cf_cfg,
                                                  &summary);
        write_cf_results(cf_path, results);
        int written = 0;
        for (const auto& r : results) {
            if (written >= panels || r.validity != 1) continue;
            RasterObs s = render_from_objects(r.sigma, env_cfg);
            RasterObs s_cf = render_from_objects(r.sigma_cf, env_cfg);
            write_cf_panel_png(out_dir + "/panel_" + std::to_string(written) + ".png", s, s_cf);
            ++written;
        }
    });

    // 4. eval-metrics
    run_stage("eval-metrics", hex64(file_digest(cf_path)), {report_json, report_txt}, [&] {
        std::vector<CFResult> results = read_cf_results(cf_path);
        json echo;
        echo["lambda_max"] = cf_cfg.lambda_max;
        echo["queries"] = cf_queries;
        echo["env"] = env_kind_name(env_cfg.kind);
        MetricReport rep = build_report(results, env_cfg, echo.dump());
        write_text_file(report_json, rep.to_json() + "\n");
        write_text_file(report_txt, rep.to_text());
    });

    // 5. extract-rules (highway analysis)
    if (env_cfg.kind == EnvKind::Highway) {
        std::ostringstream rule_inputs;
        rule_inputs << hex64(file_digest(cf_path)) << ' ' << rules_depth << ' ' << rules_min_leaf;
        run_stage("extract-rules", rule_inputs.str(), {rules_txt, rules_json}, [&] {
            std::vector<CFResult> results = read_cf_results(cf_path);
            RuleDatasetResult ds = build_rule_dataset(results, env_cfg);
            if (static_cast<int>(ds.samples.size()) < rules_min_leaf)
                throw std::runtime_error("not enough valid counterfactuals for rule extraction (" +
                                         std::to_string(ds.samples.size()) + ")");
            std::vector<std::string> actions;
            for (int a = 0; a < env_cfg.action_count(); ++a)
                actions.push_back(action_name(env_cfg.kind, a));
            RuleTree tree = fit_tree(ds.samples, rules_depth, rules_min_leaf,
                                     derive_seed(seed, 400), {}, actions);
            write_text_file(rules_txt, format_rules(tree));
            write_text_file(rules_json, tree.to_json() + "\n");
        });
    }

    manifest.save();
    result.manifest_path = manifest.path;

    // summary fields for callers
    if (fs::exists(cf_path)) result.cf_count = static_cast<int>(read_cf_results(cf_path).size());
    if (fs::exists(report_json)) result.report = MetricReport::from_json(read_text_file(report_json));
    if (fs::exists(rules_txt)) {
        std::istringstream in(read_text_file(rules_txt));
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++result.rule_count;
    }
    return result;
}

}  // namespace cfrl
