#include <filesystem>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "tailrisk/cli.h"
#include "tailrisk/io.h"
#include "tailrisk/synthlab.h"

using namespace tailrisk;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args) {
    args.insert(args.begin(), "tailrisk");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text(e.path());
    }
    return files;
}

bool star_rule(const std::string& lower, const std::string& upper) {
    return std::stod(lower) > 0.0 || std::stod(upper) < 0.0;
}

// Small tail-mode panel written as CSV plus a fast run config beside it.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new fs::path(fs::temp_directory_path() / "tailrisk_cli_test");
        fs::remove_all(*dir_);
        fs::create_directories(*dir_);
        DgpSpec d;
        d.n_firms = 60;
        d.n_months = 60;
        d.tail_mode = true;
        d.theta_stress = -0.05;
        d.noise_scale = 0.06;
        d.outcome_scale = 0.02;
        d.seed = 31;
        const GeneratedPanel g = generate_panel(d);
        panel_csv_ = new CsvTable(panel_to_csv(g.panel));
        write_text(*dir_ / "panel.csv", format_csv(*panel_csv_));
        write_config("run.json", base_config());
    }
    static void TearDownTestSuite() {
        fs::remove_all(*dir_);
        delete panel_csv_;
        delete dir_;
    }

    static ordered_json base_config() {
        return {{"panel", "panel.csv"},
                {"output_dir", "out"},
                {"seed", 99},
                {"threads", 1},
                {"crash", {{"thresholds", {0.15, 0.20, 0.25}}, {"n_boot", 100}}},
                {"quantile", {{"taus", {0.05, 0.20}}, {"n_boot", 100}}},
                {"dml",
                 {{"learners", {"lasso", "random_forest"}},
                  {"n_folds", 2},
                  {"cv_folds", 2},
                  {"lambda_count", 5},
                  {"forest", {{"n_trees", 10}, {"max_depth", 3}, {"min_leaf", 20}, {"feature_fraction", 0.5}}},
                  {"pillars", true}}}};
    }
    static fs::path write_config(const std::string& name, const ordered_json& j) {
        const fs::path p = *dir_ / name;
        write_text(p, j.dump(2));
        return p;
    }
    static fs::path out(const std::string& name) { return *dir_ / name; }
    static std::string config() { return (*dir_ / "run.json").string(); }

    static fs::path* dir_;
    static CsvTable* panel_csv_;
};
fs::path* CliTest::dir_ = nullptr;
CsvTable* CliTest::panel_csv_ = nullptr;

}  // namespace

TEST_F(CliTest, StressWritesFilesAndRerunsIdentically) {
    const CliRun a = cli({"stress", "-c", config(), "-o", out("stress_a").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    for (const char* f : {"regime.csv", "regime_histogram.csv", "regime_summary.json", "preparation.json",
                          "config.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(out("stress_a") / f)) << f;
    }
    const CliRun b = cli({"stress", "-c", config(), "-o", out("stress_b").string()});
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(tree(out("stress_a")), tree(out("stress_b")));

    // Flags recomputed from the stored cutoff match the stored flags.
    const ordered_json summary = read_json(out("stress_a") / "regime_summary.json");
    const double cutoff = summary["cutoff"].get<double>();
    const CsvTable regime = read_csv(out("stress_a") / "regime.csv");
    int n_stress = 0;
    for (const auto& row : regime.rows) {
        const bool flagged = row[3] == "1";
        EXPECT_EQ(flagged, *parse_value(row[1], "market_return") <= cutoff);
        n_stress += flagged;
    }
    EXPECT_EQ(n_stress, summary["n_stress"].get<int>());
    EXPECT_EQ(summary["schema_version"].get<int>(), kSchemaVersion);
}

TEST_F(CliTest, MissingVolumeColumnExitsTwo) {
    CsvTable t = *panel_csv_;
    const int v = t.find("volume_usd");
    t.header.erase(t.header.begin() + v);
    for (auto& r : t.rows) r.erase(r.begin() + v);
    write_text(*dir_ / "novol.csv", format_csv(t));
    ordered_json j = base_config();
    j["panel"] = "novol.csv";
    const CliRun r = cli({"stress", "-c", write_config("novol.json", j).string(), "-o", out("novol").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("missing required column"), std::string::npos) << r.err;
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
    ordered_json j = base_config();
    j["quantile"]["n_bot"] = 100;
    CliRun r = cli({"stress", "-c", write_config("typo.json", j).string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("quantile.n_bot"), std::string::npos) << r.err;

    j = base_config();
    j.erase("seed");
    r = cli({"stress", "-c", write_config("noseed.json", j).string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
    // --seed supplies it.
    r = cli({"stress", "-c", (*dir_ / "noseed.json").string(), "--seed", "4", "-o", out("seeded").string()});
    EXPECT_EQ(r.code, 0) << r.err;

    j = base_config();
    j["panel"] = "absent.csv";
    EXPECT_EQ(cli({"stress", "-c", write_config("absent.json", j).string()}).code, 2);
    EXPECT_EQ(cli({"stress", "-c", (*dir_ / "nothing.json").string()}).code, 2);
    write_text(*dir_ / "broken.json", "{\"seed\": ");
    EXPECT_EQ(cli({"stress", "-c", (*dir_ / "broken.json").string()}).code, 2);
    EXPECT_EQ(cli({"stress"}).code, 2);
    EXPECT_EQ(cli({"frobnicate", "-c", config()}).code, 2);
    EXPECT_EQ(cli({"stress", "-c", config(), "--threads", "-1"}).code, 2);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, CrashReportsFourFitsAndThreeSections) {
    const CliRun r = cli({"crash", "-c", config(), "-o", out("crash").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const ordered_json j = read_json(out("crash") / "crash.json");
    int max_cells = 0;
    for (const auto& c : j["headline"]["cells"]) max_cells += c["sample"] == "max";
    EXPECT_EQ(max_cells, 4);
    EXPECT_EQ(j["thresholds"].size(), 3u);
    EXPECT_EQ(read_csv(out("crash") / "crash_thresholds.csv").rows.size(), 3u);
    EXPECT_TRUE(fs::exists(out("crash") / "quintile_gap.csv"));
    EXPECT_TRUE(fs::exists(out("crash") / "crash_logits.csv"));
}

TEST_F(CliTest, DegenerateRegimeWarnsAndExitsZero) {
    // No return below -20% anywhere: every crash_020 cell is degenerate.
    CsvTable t = *panel_csv_;
    const int ret = t.find("ret");
    for (auto& row : t.rows) {
        if (!row[ret].empty() && std::stod(row[ret]) < -0.15) row[ret] = "-0.15";
    }
    write_text(*dir_ / "calm.csv", format_csv(t));
    ordered_json j = base_config();
    j["panel"] = "calm.csv";
    j["crash"]["thresholds"] = {0.20};
    const CliRun r = cli({"crash", "-c", write_config("calm.json", j).string(), "-o", out("calm").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("warning:"), std::string::npos);
    const CsvTable logits = read_csv(out("calm") / "crash_logits.csv");
    const int status = logits.find("status");
    ASSERT_GE(status, 0);
    for (const auto& row : logits.rows) EXPECT_EQ(row[status], "failed");
}

TEST_F(CliTest, QuantileSmokeRunAndStarRule) {
    const CliRun r = cli({"quantile", "-c", config(), "-o", out("quantile").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const ordered_json j = read_json(out("quantile") / "quantile.json");
    EXPECT_TRUE(j["bootstrap"].contains("n_failed"));
    EXPECT_EQ(j["rows"].size(), 2u);
    const CsvTable t = read_csv(out("quantile") / "quantile_table.csv");
    EXPECT_EQ(t.rows.size(), 8u);  // 2 taus x 4 quantities
    const int lo = t.find("ci_lower"), hi = t.find("ci_upper"), star = t.find("star");
    for (const auto& row : t.rows) EXPECT_EQ(row[star] == "*", star_rule(row[lo], row[hi]));
    for (const auto& row : j["rows"]) {
        for (const auto& [name, q] : row["quantities"].items()) {
            const bool excl = q["ci_lower"].get<double>() > 0.0 || q["ci_upper"].get<double>() < 0.0;
            EXPECT_EQ(q["star"] == "*", excl) << name;
        }
        const auto& qs = row["quantities"];
        EXPECT_EQ(qs["esg_stress_slope"]["estimate"].get<double>(),
                  qs["esg_nonstress"]["estimate"].get<double>() + qs["interaction"]["estimate"].get<double>());
    }
}

TEST_F(CliTest, DmlMatrixCardinalityPillarsAndDeterminism) {
    const CliRun a = cli({"dml", "-c", config(), "-o", out("dml_a").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    const CsvTable t = read_csv(out("dml_a") / "dml_table.csv");
    EXPECT_EQ(t.rows.size(), 8u);
    std::set<std::string> combos;
    for (const auto& row : t.rows) combos.insert(row[0] + "/" + row[1] + "/" + row[4]);
    EXPECT_EQ(combos.size(), 8u);
    const CsvTable p = read_csv(out("dml_a") / "dml_pillars.csv");
    std::set<std::string> labels;
    for (const auto& row : p.rows) labels.insert(row[p.find("treatment_label")]);
    EXPECT_EQ(labels.size(), 4u);

    const CliRun b = cli({"dml", "-c", config(), "-o", out("dml_b").string(), "--threads", "0"});
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(tree(out("dml_a")), tree(out("dml_b")));
}

TEST_F(CliTest, SimulateGuardsAndSmallRun) {
    const ordered_json dgp = {{"n_firms", 50}, {"n_months", 60}, {"theta_stress", 0.3}, {"theta_normal", 0.3}};
    auto spec_run = [&](const std::string& name, const ordered_json& spec) {
        write_text(*dir_ / (name + "_spec.json"), spec.dump());
        const ordered_json cfg = {{"seed", 5}, {"simulate", {{"spec", name + "_spec.json"}}}};
        return cli({"simulate", "-c", write_config(name + ".json", cfg).string(), "-o", out(name).string()});
    };
    const ordered_json ols = {{"name", "naive_ols"}};
    CliRun r = spec_run("sim_few", {{"dgp", dgp}, {"replications", 99}, {"estimators", {ols}}});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("at least 100"), std::string::npos) << r.err;

    // Nobody falls 90% in a month, so every replication sees a constant
    // outcome.
    const ordered_json deep = {{"n_firms", 50},        {"n_months", 60},        {"tail_mode", true},
                               {"theta_stress", -0.05}, {"noise_scale", 0.02},   {"outcome_scale", 0.02},
                               {"jump_size", 0.05},     {"crash_threshold", 0.9}};
    const ordered_json bad = {
        {"name", "dml"}, {"learner", "lasso"}, {"outcome", "crash_090"}, {"n_folds", 2}, {"cv_folds", 2}};
    r = spec_run("sim_fail", {{"dgp", deep}, {"replications", 100}, {"estimators", {bad}}});
    EXPECT_EQ(r.code, 1) << r.err;
    EXPECT_NE(r.err.find("replications failed"), std::string::npos) << r.err;

    r = spec_run("sim_ok", {{"dgp", dgp}, {"replications", 100}, {"estimators", {ols}}});
    ASSERT_EQ(r.code, 0) << r.err;
    const ordered_json j = read_json(out("sim_ok") / "sim_result.json");
    EXPECT_EQ(j["replications"].get<int>(), 100);
    EXPECT_EQ(j["results"].size(), 1u);
    EXPECT_EQ(j["dgp"]["seed"].get<std::uint64_t>(), 5u);

    // --panel-out writes one panel and its ground truth.
    const fs::path panel_out = out("sim_panel") / "p.csv";
    const ordered_json cfg = {{"seed", 5}, {"simulate", {{"spec", "sim_ok_spec.json"}}}};
    write_text(*dir_ / "panel_only_spec.json", ordered_json({{"dgp", dgp}}).dump());
    const ordered_json only = {{"seed", 5}, {"simulate", {{"spec", "panel_only_spec.json"}}}};
    r = cli({"simulate", "-c", write_config("panel_only.json", only).string(), "-o", out("sim_panel").string(),
             "--panel-out", panel_out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_csv(panel_out).rows.size(), 50u * 60u);
    EXPECT_TRUE(fs::exists(out("sim_panel") / "p.truth.json"));
}

TEST_F(CliTest, PipelinePartialFailureKeepsEarlierOutputs) {
    CsvTable t = *panel_csv_;
    for (const char* col : {"e_score", "s_score", "g_score"}) {
        const int k = t.find(col);
        t.header.erase(t.header.begin() + k);
        for (auto& r : t.rows) r.erase(r.begin() + k);
    }
    write_text(*dir_ / "nopillars.csv", format_csv(t));
    ordered_json j = base_config();
    j["panel"] = "nopillars.csv";
    j["crash"]["thresholds"] = {0.20};
    const CliRun r = cli({"pipeline", "-c", write_config("nopillars.json", j).string(), "-o", out("partial").string()});
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_NE(r.err.find("pillar"), std::string::npos) << r.err;
    const ordered_json m = read_json(out("partial") / "manifest.json");
    EXPECT_EQ(m["status"], "failed");
    EXPECT_EQ(m["failed_stage"], "dml");
    for (const char* f : {"regime.csv", "crash.json", "quantile.json", "quantile_table.csv"}) {
        EXPECT_TRUE(fs::exists(out("partial") / f)) << f;
    }
}

TEST_F(CliTest, PipelineManifestHashesAndInputsUntouched) {
    const std::string panel_before = read_text(*dir_ / "panel.csv");
    const std::string config_before = read_text(config());
    ordered_json j = base_config();
    j["crash"]["thresholds"] = {0.20};
    j["dml"]["learners"] = {"lasso"};
    const fs::path cfg = write_config("pipe.json", j);
    const CliRun a = cli({"pipeline", "-c", cfg.string(), "-o", out("pipe_a").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    const ordered_json m = read_json(out("pipe_a") / "manifest.json");
    EXPECT_EQ(m["status"], "ok");
    EXPECT_EQ(m["command"], "pipeline");
    std::set<std::string> listed;
    std::string previous;
    for (const auto& art : m["artifacts"]) {
        const std::string path = art["path"].get<std::string>();
        EXPECT_LT(previous, path);
        previous = path;
        listed.insert(path);
        const std::string bytes = read_text(out("pipe_a") / path);
        EXPECT_EQ(art["sha256"].get<std::string>(), sha256_hex(bytes)) << path;
        EXPECT_EQ(art["bytes"].get<std::size_t>(), bytes.size()) << path;
    }
    std::set<std::string> on_disk;
    for (const auto& [path, bytes] : tree(out("pipe_a"))) {
        if (path != "manifest.json") on_disk.insert(path);
    }
    EXPECT_EQ(listed, on_disk);
    EXPECT_EQ(read_text(*dir_ / "panel.csv"), panel_before);
    EXPECT_EQ(read_text(config()), config_before);

    // Output directory taken from the config, relative to the config file.
    const CliRun b = cli({"pipeline", "-c", cfg.string()});
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(read_text(*dir_ / "out" / "manifest.json"), read_text(out("pipe_a") / "manifest.json"));
}
