#pragma once

#include <string>

#include "daclora/dataset.hpp"
#include "daclora/model.hpp"

namespace dac {

// Versioned little-endian binary container: magic, format version, a JSON
// metadata blob, then raw named f64/i64 arrays. Doubles are stored as raw
// bits, so save -> load -> save is byte-identical.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kSnapshotVersion = 1;

void save_checkpoint(const DualEncoderModel& model, const std::string& path);
DualEncoderModel load_checkpoint(const std::string& path);

void save_dataset_snapshot(const FewShotDataset& dataset, const std::string& path);
FewShotDataset load_dataset_snapshot(const std::string& path);

}  // namespace dac
