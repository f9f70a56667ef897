#pragma once

#include <optional>
#include <string>

#include "daclora/config.hpp"

namespace dac {

// Command implementations shared by the binary and the tests. Each writes
// its artifacts under out_dir and throws on failure; exit-code mapping
// happens in the binary's main().
//   ConfigError / bad usage -> 1, runtime or numerical failure -> 2.

void cmd_train(const RunConfig& cfg, const std::string& out_dir,
               const std::optional<std::string>& export_dataset_path = std::nullopt);

void cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
              const std::optional<double>& epsilon_override, const std::string& out_dir);

void cmd_compare(const RunConfig& cfg, const std::string& out_dir);

void cmd_ablate(const RunConfig& cfg, const std::string& out_dir);

}  // namespace dac
