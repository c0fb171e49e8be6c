#pragma once

#include "cfrl/cf.hpp"
#include "cfrl/distill.hpp"

namespace cfrl {

// Versioned binary containers: 8-byte magic, u32 version, u32 meta length,
// JSON meta, payload, trailing fnv64 digest over everything before it.
// Models additionally get a human-readable "<path>.json" sidecar.

constexpr uint32_t kContainerVersion = 1;

void save_teacher(const std::string& path, const TeacherModel& model);
TeacherModel load_teacher(const std::string& path);

void save_student(const std::string& path, const StudentModel& model);
StudentModel load_student(const std::string& path);

void save_dataset(const std::string& path, const DistillDataset& data);
DistillDataset load_dataset(const std::string& path);

void write_cf_results(const std::string& path, const std::vector<CFResult>& results);
std::vector<CFResult> read_cf_results(const std::string& path);

uint64_t file_digest(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cfrl
