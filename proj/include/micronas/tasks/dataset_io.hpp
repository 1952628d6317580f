#pragma once

#include <string>
#include <vector>

#include "micronas/tasks/tasks.hpp"

namespace micronas {

// Binary container, little-endian:
//   8-byte magic "MNDSET01"
//   u64 samples, u32 H, u32 W, u32 C, u32 classes, u32 has_flags
//   f64 features[samples*H*W*C], i32 labels[samples], i32 flags[samples]?
void write_dataset(const std::string& path, const LabeledDataset& d);
LabeledDataset read_dataset(const std::string& path, const std::string& split = "");

/// `sample_id,score,is_anomalous` rows.
void write_scores_csv(const std::string& path, const std::vector<double>& scores, const std::vector<int>& flags);

}  // namespace micronas
