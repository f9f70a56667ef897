#include "daclora/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "daclora/rng.hpp"

namespace dac {

namespace {

// Class identity is spread over many pixels: a dense signal keeps the
// robust-optimal classifier inside the reach of a dense random backbone
// (a sparse signal would demand sparse input weights, which frozen random
// features plus low-rank adapters cannot express).
//
// Difficulty acts on two axes. It shrinks the template separation, and it
// mixes in a fraction of cross-class interpolants: examples drawn mostly
// past the midpoint toward a rival class but keeping their original label.
// Those put a hard ceiling on clean accuracy (like the ambiguous examples
// of a real few-shot task) without softening the margin of the rest, so
// the unambiguous mass stays robustly classifiable at the evaluation
// budget.
constexpr int kSupportPixels = 64;
constexpr double kNoiseSigma = 0.12;

double separation(double difficulty) { return 1.8 - 1.0 * difficulty; }
double ambiguous_fraction(double difficulty) { return 0.3 * difficulty; }

struct TemplateSet {
  std::vector<std::vector<double>> templates;  // per class, d_pixels each
};

TemplateSet make_templates(const DatasetConfig& cfg) {
  Rng rng = split_rng(cfg.seed, "dataset/templates");
  const std::size_t d = cfg.d_pixels();
  const std::size_t support = std::min<std::size_t>(kSupportPixels, d);
  const double sep = separation(cfg.difficulty);
  const double amp = sep / std::sqrt(static_cast<double>(support));
  TemplateSet set;
  set.templates.resize(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::vector<double>& t = set.templates[c];
    t.assign(d, 0.5);
    std::vector<std::size_t> pixels(d);
    for (std::size_t i = 0; i < d; ++i) pixels[i] = i;
    rng.shuffle(pixels);
    for (std::size_t s = 0; s < support; ++s) {
      const double dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
      t[pixels[s]] = 0.5 + dir * amp;
    }
  }
  return set;
}

Split draw_split(const DatasetConfig& cfg, const TemplateSet& tpl, int per_class,
                 const char* stream) {
  Rng rng = split_rng(cfg.seed, stream);
  const std::size_t d = cfg.d_pixels();
  const double p_ambiguous = ambiguous_fraction(cfg.difficulty);
  Split split;
  std::vector<double> images;
  images.reserve(static_cast<std::size_t>(cfg.num_classes) * per_class * d);
  for (int c = 0; c < cfg.num_classes; ++c) {
    const std::vector<double>& t = tpl.templates[c];
    for (int i = 0; i < per_class; ++i) {
      double lambda = 0.0;
      const std::vector<double>* rival = &t;
      if (rng.uniform() < p_ambiguous) {
        const int other =
            (c + 1 + static_cast<int>(rng.below(cfg.num_classes - 1))) % cfg.num_classes;
        rival = &tpl.templates[other];
        lambda = rng.uniform(0.55, 0.95);
      }
      for (std::size_t p = 0; p < d; ++p) {
        double v = t[p] + lambda * ((*rival)[p] - t[p]) + kNoiseSigma * rng.gaussian();
        images.push_back(std::min(1.0, std::max(0.0, v)));
      }
      split.labels.push_back(c);
    }
  }
  split.images = Tensor({static_cast<std::size_t>(cfg.num_classes) * per_class, d},
                        std::move(images));
  return split;
}

}  // namespace

void DatasetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
  if (shots < 1) throw ConfigError("dataset: shots must be positive");
  if (image_size < 2) throw ConfigError("dataset: image_size must be at least 2");
  if (test_per_class < 1) throw ConfigError("dataset: test_per_class must be positive");
  if (pretrain_per_class < 1)
    throw ConfigError("dataset: pretrain_per_class must be positive");
  if (difficulty < 0.0 || difficulty > 1.0)
    throw ConfigError("dataset: difficulty must lie in [0, 1]");
}

FewShotDataset make_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const TemplateSet tpl = make_templates(cfg);
  FewShotDataset ds;
  ds.cfg = cfg;
  ds.train = draw_split(cfg, tpl, cfg.shots, "dataset/train");
  ds.test = draw_split(cfg, tpl, cfg.test_per_class, "dataset/test");
  ds.pretrain = draw_split(cfg, tpl, cfg.pretrain_per_class, "dataset/pretrain");
  return ds;
}

FewShotDataset make_dataset(int num_classes, int shots, std::uint64_t seed,
                            double difficulty) {
  DatasetConfig cfg;
  cfg.num_classes = num_classes;
  cfg.shots = shots;
  cfg.seed = seed;
  cfg.difficulty = difficulty;
  return make_dataset(cfg);
}

}  // namespace dac
