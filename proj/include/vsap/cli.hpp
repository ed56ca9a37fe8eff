#pragma once

// Command-line front end. Every command resolves a RunConfig (defaults, then
// an optional JSON file, then --set overrides, then explicit flags) and
// writes the resolved config next to its outputs.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsap/dataset.hpp"
#include "vsap/tasks.hpp"
#include "vsap/trainer.hpp"

namespace vsap::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "VSAP_OUTPUT_ROOT";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Root for default paths: $VSAP_OUTPUT_ROOT, else ./runs.
std::filesystem::path output_root();

/// Complete default configuration; also the schema (unknown keys are errors).
nlohmann::ordered_json default_config();

/// Overlays `patch` onto `base`. Throws Errc::kConfig on unknown sections or
/// keys and on type mismatches.
void merge_config(nlohmann::ordered_json& base, const nlohmann::ordered_json& patch);

/// Applies "section.key=value"; the value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(nlohmann::ordered_json& config, const std::string& assignment);

/// A number, or "inf" / "infinity".
double parse_kappa(const nlohmann::ordered_json& value);

GenerateSpec generate_spec(const nlohmann::ordered_json& config);
TrainConfig train_config(const nlohmann::ordered_json& config);
std::uint64_t eval_seed(const nlohmann::ordered_json& config);
RetrievalSpec retrieval_spec(const nlohmann::ordered_json& config);
PoseBenchmarkSpec pose_benchmark_spec(const nlohmann::ordered_json& config);

struct Paths {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
};

/// Fills empty paths from the config's "paths" section, then from defaults
/// under output_root().
Paths resolve_paths(const nlohmann::ordered_json& config, const std::string& command);

int cmd_generate(const nlohmann::ordered_json& config, const Paths& paths);
int cmd_train(const nlohmann::ordered_json& config, const Paths& paths);
int cmd_eval_retrieval(const nlohmann::ordered_json& config, const Paths& paths);
int cmd_eval_segment(const nlohmann::ordered_json& config, const Paths& paths);
int cmd_eval_pose(const nlohmann::ordered_json& config, const Paths& paths);
int cmd_coseg(const nlohmann::ordered_json& config, const Paths& paths);

/// Full CLI entry point (argument parsing, dispatch, exit codes).
int run(int argc, const char* const* argv);

}  // namespace vsap::cli
