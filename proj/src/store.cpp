#include "cfrl/store.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>

namespace cfrl {

namespace {

constexpr char kModelMagic[9] = "CFRLNET1";
constexpr char kDatasetMagic[9] = "CFRLDST1";

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& s, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(s, bits);
}

struct Reader {
    const std::string& buf;
    const std::string& path;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated file: " + path);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

std::string read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_binary(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path);
}

std::string seal(std::string body) {
    uint64_t digest = fnv1a64(body.data(), body.size());
    put_u64(body, digest);
    return body;
}

// Verifies magic/version/digest and returns a reader positioned after the
// version field.
Reader open_container(const std::string& buf, const std::string& path, const char* magic) {
    if (buf.size() < 20) throw IoError("truncated file: " + path);
    Reader r{buf, path};
    std::string m = r.bytes(8);
    if (m != magic)
        throw IoError("bad magic in " + path + ": expected " + magic);
    uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<uint64_t>(static_cast<uint8_t>(buf[buf.size() - 8 + i])) << (8 * i);
    if (fnv1a64(buf.data(), buf.size() - 8) != stored)
        throw IoError("digest mismatch (corrupt or truncated): " + path);
    uint32_t version = r.u32();
    if (version != kContainerVersion)
        throw IoError("unsupported version " + std::to_string(version) + " in " + path +
                      " (this build reads version " + std::to_string(kContainerVersion) + ")");
    return r;
}

std::string model_body(const Network& net, const nlohmann::json& meta) {
    std::string body(kModelMagic, 8);
    put_u32(body, kContainerVersion);
    std::string meta_text = meta.dump();
    put_u32(body, static_cast<uint32_t>(meta_text.size()));
    body += meta_text;
    put_u64(body, static_cast<uint64_t>(net.param_count()));
    for (float v : net.params) put_f32(body, v);
    return body;
}

std::pair<Network, nlohmann::json> read_model(const std::string& path) {
    std::string buf = read_binary(path);
    Reader r = open_container(buf, path, kModelMagic);
    uint32_t meta_len = r.u32();
    nlohmann::json meta = nlohmann::json::parse(r.bytes(meta_len));
    uint64_t count = r.u64();
    std::vector<float> params(count);
    for (uint64_t i = 0; i < count; ++i) params[i] = r.f32();
    Network net = Network::with_params(meta.at("input_shape").get<std::vector<int>>(),
                                       Network::parse_descriptor(meta.at("arch").get<std::string>()),
                                       std::move(params));
    return {std::move(net), std::move(meta)};
}

void write_sidecar(const std::string& path, const nlohmann::json& meta) {
    write_text_file(path + ".json", meta.dump(2) + "\n");
}

}  // namespace

void save_teacher(const std::string& path, const TeacherModel& model) {
    nlohmann::json meta;
    meta["kind"] = "teacher";
    meta["arch"] = model.net.descriptor();
    meta["input_shape"] = model.net.input_shape();
    meta["algo"] = algo_name(model.algo);
    meta["env"] = env_kind_name(model.env);
    meta["action_count"] = model.actions;
    meta["train_steps"] = model.train_steps;
    meta["final_epsilon"] = model.final_epsilon;
    meta["seed"] = model.seed;
    write_binary(path, seal(model_body(model.net, meta)));
    write_sidecar(path, meta);
}

TeacherModel load_teacher(const std::string& path) {
    auto [net, meta] = read_model(path);
    if (meta.at("kind").get<std::string>() != "teacher")
        throw IoError(path + " is not a teacher model file");
    TeacherModel m;
    m.net = std::move(net);
    m.algo = algo_from(meta.at("algo").get<std::string>());
    m.env = env_kind_from(meta.at("env").get<std::string>());
    m.actions = meta.at("action_count").get<int>();
    m.train_steps = meta.at("train_steps").get<int64_t>();
    m.final_epsilon = meta.at("final_epsilon").get<double>();
    m.seed = meta.at("seed").get<uint64_t>();
    return m;
}

void save_student(const std::string& path, const StudentModel& model) {
    nlohmann::json meta;
    meta["kind"] = "student";
    meta["arch"] = model.net.descriptor();
    meta["input_shape"] = model.net.input_shape();
    meta["loss"] = loss_name(model.loss_kind);
    meta["tau"] = model.tau;
    meta["env"] = env_kind_name(model.env);
    meta["action_count"] = model.actions;
    write_binary(path, seal(model_body(model.net, meta)));
    write_sidecar(path, meta);
}

StudentModel load_student(const std::string& path) {
    auto [net, meta] = read_model(path);
    if (meta.at("kind").get<std::string>() != "student")
        throw IoError(path + " is not a student model file");
    StudentModel m;
    m.net = std::move(net);
    m.loss_kind = loss_from(meta.at("loss").get<std::string>());
    m.tau = meta.at("tau").get<double>();
    m.env = env_kind_from(meta.at("env").get<std::string>());
    m.actions = meta.at("action_count").get<int>();
    return m;
}

void save_dataset(const std::string& path, const DistillDataset& data) {
    nlohmann::json meta;
    meta["F"] = data.feature_dim;
    meta["A"] = data.action_count;
    meta["N"] = data.records.size();
    meta["provenance"] = data.provenance.empty()
                             ? nlohmann::json::object()
                             : nlohmann::json::parse(data.provenance, nullptr, false);
    std::string body(kDatasetMagic, 8);
    put_u32(body, kContainerVersion);
    std::string meta_text = meta.dump();
    put_u32(body, static_cast<uint32_t>(meta_text.size()));
    body += meta_text;
    put_u64(body, data.records.size());
    for (const auto& rec : data.records) {
        for (float v : rec.sigma) put_f32(body, v);
        for (float v : rec.v_t) put_f32(body, v);
        put_u32(body, static_cast<uint32_t>(rec.a_best));
    }
    write_binary(path, seal(std::move(body)));
}

DistillDataset load_dataset(const std::string& path) {
    std::string buf = read_binary(path);
    Reader r = open_container(buf, path, kDatasetMagic);
    uint32_t meta_len = r.u32();
    nlohmann::json meta = nlohmann::json::parse(r.bytes(meta_len));
    DistillDataset data;
    data.feature_dim = meta.at("F").get<int>();
    data.action_count = meta.at("A").get<int>();
    data.provenance = meta.at("provenance").dump();
    uint64_t n = r.u64();
    data.records.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        DistillRecord rec;
        rec.sigma.resize(data.feature_dim);
        for (auto& v : rec.sigma) v = r.f32();
        rec.v_t.resize(data.action_count);
        for (auto& v : rec.v_t) v = r.f32();
        rec.a_best = static_cast<int>(r.u32());
        data.check_record(rec);
        data.records.push_back(std::move(rec));
    }
    return data;
}

void write_cf_results(const std::string& path, const std::vector<CFResult>& results) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& r : results) out << cf_result_to_json(r) << "\n";
    if (!out) throw IoError("short write: " + path);
}

std::vector<CFResult> read_cf_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<CFResult> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(cf_result_from_json(line));
    }
    return out;
}

uint64_t file_digest(const std::string& path) {
    return fnv1a64(read_binary(path));
}

std::string read_text_file(const std::string& path) { return read_binary(path); }

void write_text_file(const std::string& path, const std::string& text) {
    write_binary(path, text);
}

}  // namespace cfrl
