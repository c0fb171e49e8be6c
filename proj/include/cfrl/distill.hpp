#pragma once

#include <nlohmann/json_fwd.hpp>

#include "cfrl/teacher.hpp"

namespace cfrl {

enum class LossKind { MSE, NLL, KL };
std::string loss_name(LossKind k);
LossKind loss_from(const std::string& name);

struct DistillRecord {
    std::vector<float> sigma;  // object-list features
    std::vector<float> v_t;    // teacher soft action values
    int a_best = 0;            // argmax(v_t), stored and re-checked on load
};

struct DistillDataset {
    int feature_dim = 0;
    int action_count = 0;
    std::vector<DistillRecord> records;
    std::string provenance;  // JSON text: teacher digest, env, collection policy, seed

    void check_record(const DistillRecord& r) const;
};

// Rolls the teacher out (eps_mix-greedy), pairing object-list states with the
// teacher's soft actions on the raster view of the same instant.
DistillDataset collect_dataset(const RasterPolicy& teacher, const EnvConfig& cfg, int n,
                               uint64_t seed, double eps_mix);

// Batch-summed distillation losses. `tau` applies to the teacher values in
// the KL loss only; the student softmax is untempered.
double kd_loss(LossKind kind, const std::vector<float>& v_t, const std::vector<float>& v_s,
               int a_best, double tau);
// Same value, also emitting d(loss)/d(v_s).
double kd_loss_grad(LossKind kind, const std::vector<float>& v_t, const std::vector<float>& v_s,
                    int a_best, double tau, std::vector<double>& dv_s);

struct StudentModel {
    Network net;
    LossKind loss_kind = LossKind::KL;
    double tau = 0.01;
    EnvKind env = EnvKind::Highway;
    int actions = 0;

    std::vector<float> values(const std::vector<float>& sigma) const { return net.forward(sigma); }
    int greedy(const std::vector<float>& sigma) const { return argmax(net.forward(sigma)); }
};

struct StudentTrainResult {
    StudentModel model;
    std::vector<double> epoch_loss;  // per-record mean per epoch
};

StudentTrainResult train_student(const DistillDataset& data, LossKind kind, double tau, int epochs,
                                 int batch, double lr, uint64_t seed, int hidden = 256,
                                 EnvKind env = EnvKind::Highway);

struct FidelityReport {
    double teacher_score = 0;
    double student_score = 0;
    double relative_pct = 0;          // student/teacher x100; meaningless if !relative_defined
    bool relative_defined = false;    // false when the teacher score is zero
    double agreement_pct = 0;         // argmax match on teacher-visited states
    int agreement_states = 0;
};

FidelityReport fidelity(const RasterPolicy& teacher, const StudentModel& student,
                        const EnvConfig& cfg, int trials, int episodes_per_trial, uint64_t seed);

// Argmax agreement between student and stored teacher labels.
double dataset_agreement_pct(const StudentModel& student, const DistillDataset& data,
                             size_t begin, size_t end);

}  // namespace cfrl
