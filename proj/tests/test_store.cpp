#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cfrl/pipeline.hpp"
#include "cfrl/store.hpp"

using namespace cfrl;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    fs::path p = fs::temp_directory_path() / "cfrl_store_test";
    fs::create_directories(p);
    return p;
}

TeacherModel make_teacher() {
    TeacherModel m;
    m.algo = Algo::DQN;
    m.env = EnvKind::Highway;
    m.actions = 5;
    m.train_steps = 123;
    m.final_epsilon = 0.05;
    m.seed = 9;
    m.net = Network::make({8, 8, 2}, {LayerSpec::conv(4, 4, 2, true), LayerSpec::dense(5)}, 7);
    return m;
}

std::string corrupt(const std::string& path, size_t offset, char value) {
    std::string bytes = read_text_file(path);
    bytes[offset] = value;
    std::string out = path + ".corrupt";
    write_text_file(out, bytes);
    return out;
}

}  // namespace

TEST_CASE("teacher model round-trips byte-identically") {
    auto dir = tmp_dir();
    std::string p1 = (dir / "teacher.bin").string();
    std::string p2 = (dir / "teacher2.bin").string();
    TeacherModel m = make_teacher();
    save_teacher(p1, m);
    TeacherModel loaded = load_teacher(p1);
    CHECK(loaded.net.params == m.net.params);
    CHECK(loaded.algo == m.algo);
    CHECK(loaded.actions == m.actions);
    CHECK(loaded.train_steps == m.train_steps);
    save_teacher(p2, loaded);
    CHECK(read_text_file(p1) == read_text_file(p2));  // save -> load -> save identical
    CHECK(fs::exists(p1 + ".json"));                  // architecture sidecar

    // loaded model computes identically
    RasterObs obs;
    obs.h = obs.w = 8;
    obs.k = 2;
    obs.data.assign(8 * 8 * 2, 0.25f);
    CHECK(loaded.soft_values(obs) == m.soft_values(obs));
}

TEST_CASE("student model round-trips") {
    auto dir = tmp_dir();
    std::string p = (dir / "student.bin").string();
    StudentModel s;
    s.loss_kind = LossKind::KL;
    s.tau = 0.7;
    s.env = EnvKind::Pong;
    s.actions = 3;
    s.net = Network::make({16}, student_arch(32, 3), 3);
    save_student(p, s);
    StudentModel loaded = load_student(p);
    CHECK(loaded.net.params == s.net.params);
    CHECK(loaded.loss_kind == s.loss_kind);
    CHECK(loaded.tau == doctest::Approx(s.tau));
    // kind checking: a student file does not load as a teacher
    CHECK_THROWS_AS(load_teacher(p), IoError);
}

TEST_CASE("bad magic, version, truncation and digest are all rejected") {
    auto dir = tmp_dir();
    std::string p = (dir / "victim.bin").string();
    save_teacher(p, make_teacher());

    SUBCASE("bad magic names the file and the expected magic") {
        std::string bad = corrupt(p, 0, 'X');
        try {
            load_teacher(bad);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            std::string msg = e.what();
            CHECK(msg.find(bad) != std::string::npos);
            CHECK(msg.find("CFRLNET1") != std::string::npos);
        }
    }
    SUBCASE("future version is an explicit version error") {
        // version field sits right after the 8-byte magic; bump it and reseal
        std::string bytes = read_text_file(p);
        bytes[8] = 9;
        std::string body = bytes.substr(0, bytes.size() - 8);
        uint64_t digest = fnv1a64(body.data(), body.size());
        for (int i = 0; i < 8; ++i)
            bytes[bytes.size() - 8 + i] = static_cast<char>((digest >> (8 * i)) & 0xff);
        std::string vpath = (dir / "future.bin").string();
        write_text_file(vpath, bytes);
        try {
            load_teacher(vpath);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
    SUBCASE("truncated file") {
        std::string bytes = read_text_file(p);
        std::string tpath = (dir / "trunc.bin").string();
        write_text_file(tpath, bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_teacher(tpath), IoError);
    }
    SUBCASE("payload corruption trips the digest") {
        std::string bad = corrupt(p, 60, 'z');
        try {
            load_teacher(bad);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("digest") != std::string::npos);
        }
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_teacher("/no/such/file.bin"), IoError); }
}

TEST_CASE("datasets round-trip with record equality and argmax re-checks") {
    auto dir = tmp_dir();
    std::string p = (dir / "data.bin").string();
    DistillDataset d;
    d.feature_dim = 3;
    d.action_count = 2;
    d.provenance = R"({"env":"highway","seed":4})";
    for (int i = 0; i < 10; ++i) {
        DistillRecord r;
        r.sigma = {0.1f * i, -0.2f, 0.5f};
        r.v_t = {static_cast<float>(i % 3), 1.0f};
        r.a_best = argmax(r.v_t);
        d.records.push_back(r);
    }
    save_dataset(p, d);
    DistillDataset loaded = load_dataset(p);
    REQUIRE(loaded.records.size() == d.records.size());
    CHECK(loaded.feature_dim == 3);
    CHECK(loaded.action_count == 2);
    for (size_t i = 0; i < d.records.size(); ++i) {
        CHECK(loaded.records[i].sigma == d.records[i].sigma);
        CHECK(loaded.records[i].v_t == d.records[i].v_t);
        CHECK(loaded.records[i].a_best == d.records[i].a_best);
    }
    // a flipped label violates the stored-argmax invariant on load
    std::string bytes = read_text_file(p);
    // last record's a_best is the last u32 before the trailing digest
    size_t pos = bytes.size() - 12;
    bytes[pos] = static_cast<char>(bytes[pos] ^ 1);
    std::string body = bytes.substr(0, bytes.size() - 8);
    uint64_t digest = fnv1a64(body.data(), body.size());
    for (int i = 0; i < 8; ++i)
        bytes[bytes.size() - 8 + i] = static_cast<char>((digest >> (8 * i)) & 0xff);
    std::string bad = (dir / "bad_label.bin").string();
    write_text_file(bad, bytes);
    CHECK_THROWS_AS(load_dataset(bad), IoError);
}

TEST_CASE("cf result files round-trip") {
    auto dir = tmp_dir();
    std::string p = (dir / "cf.jsonl").string();
    std::vector<CFResult> rs(3);
    for (int i = 0; i < 3; ++i) {
        rs[i].sigma = {0.1f, 0.2f};
        rs[i].sigma_cf = {0.1f, 0.25f};
        rs[i].target_action = i;
        rs[i].validity = i % 2;
    }
    write_cf_results(p, rs);
    std::vector<CFResult> back = read_cf_results(p);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].target_action == i);
        CHECK(back[i].validity == i % 2);
    }
}

TEST_CASE("distill params resolve tau by algorithm") {
    DistillParams p;
    CHECK(p.resolved_tau(Algo::DQN) == doctest::Approx(0.01));
    CHECK(p.resolved_tau(Algo::A2C) == doctest::Approx(0.7));
    p.tau = 0.3;
    CHECK(p.resolved_tau(Algo::DQN) == doctest::Approx(0.3));
    auto kv = KeyValueConfig::from_string("distill.holdout = 2.0\n");
    CHECK_THROWS_AS(DistillParams::from_kv(kv), ConfigError);
}
