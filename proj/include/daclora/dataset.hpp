#pragma once

#include <cstdint>
#include <vector>

#include "daclora/tensor.hpp"

namespace dac {

struct DatasetConfig {
  int num_classes = 8;
  int shots = 4;               // train examples per class
  int image_size = 16;         // images are image_size^2 flattened pixels
  int test_per_class = 64;
  int pretrain_per_class = 64; // disjoint split the backbone is fitted on
  double difficulty = 0.5;     // 0 = far templates, 1 = nearly overlapping
  std::uint64_t seed = 1;

  std::size_t d_pixels() const {
    return static_cast<std::size_t>(image_size) * static_cast<std::size_t>(image_size);
  }
  void validate() const;
};

struct Split {
  Tensor images;            // (n x d_pixels), values in [0, 1]
  std::vector<int> labels;  // class ids, class-major order
};

// Synthetic few-shot task: one structured template per class plus
// per-example Gaussian pixel noise, everything clamped to [0, 1]. The
// same seed reproduces the same bytes; the test and pretrain splits do
// not depend on the shot count.
struct FewShotDataset {
  DatasetConfig cfg;
  Split train;
  Split test;
  Split pretrain;
};

FewShotDataset make_dataset(const DatasetConfig& cfg);
FewShotDataset make_dataset(int num_classes, int shots, std::uint64_t seed,
                            double difficulty);

}  // namespace dac
