#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tailrisk/crash.h"
#include "tailrisk/dml.h"
#include "tailrisk/io.h"
#include "tailrisk/pipeline.h"
#include "tailrisk/quantile.h"

namespace tailrisk {

inline constexpr int kSchemaVersion = 1;

struct RunConfig {
    std::filesystem::path config_dir;  // relative paths resolve against this
    std::string panel;                 // as written in the config
    std::string output_dir = "out";
    std::optional<std::uint64_t> seed;
    int threads = 1;

    PrepareOptions prepare;
    int min_days = 10;
    int histogram_bins = 20;

    std::vector<double> crash_thresholds{0.15, 0.20, 0.25};
    double headline_threshold = 0.20;
    std::size_t crash_boot = 800;

    std::vector<double> tau_grid{0.01, 0.02, 0.05, 0.10, 0.20};
    std::size_t quantile_boot = 800;
    double ci_level = 0.95;

    std::vector<std::string> dml_learners{"lasso", "random_forest"};
    std::vector<std::string> dml_outcomes{"crash_020", "excess_ret"};
    int dml_folds = 5;
    int cv_folds = 5;
    int lambda_count = 30;
    std::vector<Hyperparameters> forest_grid;
    std::vector<Hyperparameters> gbm_grid;
    bool dml_pillars = true;
    bool dml_interactions = false;

    std::string simulate_spec;  // path to a simulation spec, as written

    // Unknown keys are rejected so that a typo cannot silently fall back to a
    // default.
    static RunConfig from_json(const nlohmann::ordered_json& j, const std::filesystem::path& config_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::ordered_json to_json() const;

    std::filesystem::path resolve(const std::string& p) const;
    std::uint64_t require_seed() const;
    // Throws InputError when the panel (or the simulation spec, when asked
    // for) does not exist.
    void check_paths(bool need_panel, bool need_simulate_spec) const;

    std::vector<LearnerSpec> learner_specs() const;
};

// Loads and prepares the panel named by the config.
struct LoadedPanel {
    PanelReadReport read;
    PreparedPanel prepared;
};
LoadedPanel load_and_prepare(const RunConfig& config);

// Each command writes into `out` and returns the written file names relative
// to it. Errors propagate as InputError / EstimationError.
std::vector<std::string> cmd_stress(const RunConfig& config, const LoadedPanel& data, const std::filesystem::path& out);
std::vector<std::string> cmd_crash(const RunConfig& config, const LoadedPanel& data, const std::filesystem::path& out,
                                   std::ostream& log);
std::vector<std::string> cmd_quantile(const RunConfig& config, const LoadedPanel& data,
                                      const std::filesystem::path& out);
std::vector<std::string> cmd_dml(const RunConfig& config, const LoadedPanel& data, const std::filesystem::path& out,
                                 std::ostream& log);
std::vector<std::string> cmd_simulate(const RunConfig& config, const std::filesystem::path& out,
                                      const std::optional<std::filesystem::path>& panel_out, std::ostream& log);

// Hash and size of every regular file under `out` except the manifest itself,
// sorted by relative path.
nlohmann::ordered_json build_manifest(const std::filesystem::path& out, const std::string& command,
                                      const std::string& status, const std::string& failed_stage = {});

// Full command line front end. Returns the process exit code: 0 success, 1
// estimation failure, 2 configuration or input error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tailrisk
