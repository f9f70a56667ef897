#include "daclora/config.hpp"

#include <fstream>
#include <set>

namespace dac {

namespace {

using nlohmann::json;

// Rejects keys the schema does not know; catches silent typos like
// "attack.epsilion".
void check_keys(const json& obj, const std::string& scope,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + (scope.empty() ? key : scope + "." + key) +
                        "'");
  }
}

template <typename T>
void take(const json& obj, const char* key, T& into) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + std::string(key) + "'");
  }
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);  // bare words become strings, e.g. mode=clean
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  json* cursor = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot - start);
    if (part.empty()) throw ConfigError("--set: empty key segment in '" + path + "'");
    if (dot == std::string::npos) {
      (*cursor)[part] = parse_override_value(assignment.substr(eq + 1));
      break;
    }
    cursor = &(*cursor)[part];
    if (!cursor->is_object() && !cursor->is_null())
      throw ConfigError("--set: '" + part + "' in '" + path + "' is not a section");
    start = dot + 1;
  }
}

}  // namespace

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.total_iters = train_iters;
  cfg.learning_rate = train_lr;
  cfg.lr_schedule = lr_schedule;
  cfg.beta = beta;
  cfg.batch_size = batch_size;
  cfg.mode = mode;
  cfg.attack = attack;
  cfg.c_max = c_max;
  cfg.t_prime = resolved_t_prime();
  cfg.seed = seed;
  return cfg;
}

AttackConfig RunConfig::eval_attack_cfg() const {
  AttackConfig cfg = eval_attack_config(eval_epsilon);
  cfg.max_iters = eval_iters;
  return cfg;
}

ExperimentSettings RunConfig::experiment_settings() const {
  ExperimentSettings settings;
  settings.model = model;
  settings.model.d_pixels = dataset.d_pixels();
  settings.model.num_classes = static_cast<std::size_t>(dataset.num_classes);
  settings.pretrain = pretrain;
  settings.train = train_config();
  settings.eval_attack = eval_attack_cfg();
  settings.seed = seed;
  return settings;
}

void RunConfig::validate() const {
  dataset.validate();
  model.validate();
  if (pretrain.iters < 0) throw ConfigError("pretrain.iters: must be nonnegative");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr: must be positive");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size: must be positive");
  if (eval_iters < 1) throw ConfigError("eval.iters: must be at least 1");
  if (eval_epsilon < 0.0) throw ConfigError("eval.epsilon: must be nonnegative");
  if (t_prime && *t_prime < 1) throw ConfigError("curriculum.t_prime: must be positive");
  if (compare_arms.empty()) throw ConfigError("compare.arms: must be non-empty");
  for (const std::string& name : compare_arms) arm_from_string(name);
  if (compare_seeds.empty()) throw ConfigError("compare.seeds: must be non-empty");
  if (ablate_shots.empty() || ablate_train_epsilons.empty() || ablate_eval_epsilons.empty())
    throw ConfigError("ablate: shots, train_epsilons and eval_epsilons must be non-empty");
  train_config().validate();
}

RunConfig default_config() { return RunConfig{}; }

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  check_keys(doc, "", {"seed", "mode", "dataset", "model", "pretrain", "train", "attack",
                       "curriculum", "eval", "compare", "ablate"});
  RunConfig cfg;
  take(doc, "seed", cfg.seed);
  if (doc.contains("mode")) cfg.mode = train_mode_from_string(doc.at("mode").get<std::string>());

  if (doc.contains("dataset")) {
    const json& d = doc.at("dataset");
    check_keys(d, "dataset",
               {"classes", "shots", "image_size", "test_per_class", "pretrain_per_class",
                "difficulty"});
    take(d, "classes", cfg.dataset.num_classes);
    take(d, "shots", cfg.dataset.shots);
    take(d, "image_size", cfg.dataset.image_size);
    take(d, "test_per_class", cfg.dataset.test_per_class);
    take(d, "pretrain_per_class", cfg.dataset.pretrain_per_class);
    take(d, "difficulty", cfg.dataset.difficulty);
  }
  cfg.dataset.seed = cfg.seed;

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    check_keys(m, "model",
               {"hidden", "embed_dim", "rank", "gamma", "tau", "use_bias",
                "adapt_class_projection"});
    take(m, "hidden", cfg.model.hidden);
    take(m, "embed_dim", cfg.model.embed_dim);
    take(m, "rank", cfg.model.rank);
    take(m, "gamma", cfg.model.gamma);
    take(m, "tau", cfg.model.tau);
    take(m, "use_bias", cfg.model.use_bias);
    take(m, "adapt_class_projection", cfg.model.adapt_class_projection);
  }

  if (doc.contains("pretrain")) {
    const json& p = doc.at("pretrain");
    check_keys(p, "pretrain", {"iters", "lr", "batch_size"});
    take(p, "iters", cfg.pretrain.iters);
    take(p, "lr", cfg.pretrain.lr);
    take(p, "batch_size", cfg.pretrain.batch_size);
  }

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    check_keys(t, "train", {"iters", "lr", "lr_schedule", "beta", "batch_size"});
    take(t, "iters", cfg.train_iters);
    take(t, "lr", cfg.train_lr);
    if (t.contains("lr_schedule"))
      cfg.lr_schedule = lr_schedule_from_string(t.at("lr_schedule").get<std::string>());
    take(t, "beta", cfg.beta);
    take(t, "batch_size", cfg.batch_size);
  }

  if (doc.contains("attack")) {
    const json& a = doc.at("attack");
    check_keys(a, "attack", {"epsilon", "alpha", "max_iters", "random_init"});
    take(a, "epsilon", cfg.attack.epsilon);
    if (a.contains("alpha"))
      take(a, "alpha", cfg.attack.alpha);
    else if (a.contains("epsilon"))
      cfg.attack.alpha = cfg.attack.epsilon / 4.0;  // conventional step for a custom budget
    take(a, "max_iters", cfg.attack.max_iters);
    take(a, "random_init", cfg.attack.random_init);
  }

  if (doc.contains("curriculum")) {
    const json& c = doc.at("curriculum");
    check_keys(c, "curriculum", {"c_max", "t_prime"});
    take(c, "c_max", cfg.c_max);
    if (c.contains("t_prime")) {
      int tp = 0;
      take(c, "t_prime", tp);
      cfg.t_prime = tp;
    }
  }

  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    check_keys(e, "eval", {"epsilon", "iters"});
    take(e, "epsilon", cfg.eval_epsilon);
    take(e, "iters", cfg.eval_iters);
  }

  if (doc.contains("compare")) {
    const json& c = doc.at("compare");
    check_keys(c, "compare", {"arms", "seeds"});
    take(c, "arms", cfg.compare_arms);
    take(c, "seeds", cfg.compare_seeds);
  }

  if (doc.contains("ablate")) {
    const json& a = doc.at("ablate");
    check_keys(a, "ablate", {"shots", "train_epsilons", "eval_epsilons"});
    take(a, "shots", cfg.ablate_shots);
    take(a, "train_epsilons", cfg.ablate_train_epsilons);
    take(a, "eval_epsilons", cfg.ablate_eval_epsilons);
  }
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["mode"] = to_string(cfg.mode);
  doc["dataset"] = {{"classes", cfg.dataset.num_classes},
                    {"shots", cfg.dataset.shots},
                    {"image_size", cfg.dataset.image_size},
                    {"test_per_class", cfg.dataset.test_per_class},
                    {"pretrain_per_class", cfg.dataset.pretrain_per_class},
                    {"difficulty", cfg.dataset.difficulty}};
  doc["model"] = {{"hidden", cfg.model.hidden},
                  {"embed_dim", cfg.model.embed_dim},
                  {"rank", cfg.model.rank},
                  {"gamma", cfg.model.gamma},
                  {"tau", cfg.model.tau},
                  {"use_bias", cfg.model.use_bias},
                  {"adapt_class_projection", cfg.model.adapt_class_projection}};
  doc["pretrain"] = {{"iters", cfg.pretrain.iters},
                     {"lr", cfg.pretrain.lr},
                     {"batch_size", cfg.pretrain.batch_size}};
  doc["train"] = {{"iters", cfg.train_iters},
                  {"lr", cfg.train_lr},
                  {"lr_schedule", to_string(cfg.lr_schedule)},
                  {"beta", cfg.beta},
                  {"batch_size", cfg.batch_size}};
  doc["attack"] = {{"epsilon", cfg.attack.epsilon},
                   {"alpha", cfg.attack.alpha},
                   {"max_iters", cfg.attack.max_iters},
                   {"random_init", cfg.attack.random_init}};
  doc["curriculum"] = {{"c_max", cfg.c_max}, {"t_prime", cfg.resolved_t_prime()}};
  doc["eval"] = {{"epsilon", cfg.eval_epsilon}, {"iters", cfg.eval_iters}};
  doc["compare"] = {{"arms", cfg.compare_arms}, {"seeds", cfg.compare_seeds}};
  doc["ablate"] = {{"shots", cfg.ablate_shots},
                   {"train_epsilons", cfg.ablate_train_epsilons},
                   {"eval_epsilons", cfg.ablate_eval_epsilons}};
  return doc;
}

RunConfig load_config(const std::optional<std::string>& path,
                      const std::vector<std::string>& overrides,
                      const std::optional<std::uint64_t>& seed) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("config file '" + *path + "' cannot be opened");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + *path + "' is not valid JSON: " + e.what());
    }
  }
  for (const std::string& assignment : overrides) apply_override(doc, assignment);
  if (seed) doc["seed"] = *seed;
  RunConfig cfg = config_from_json(doc);
  cfg.validate();
  return cfg;
}

}  // namespace dac
