#include "tailrisk/synthlab.h"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/tools/roots.hpp>

#include "tailrisk/common.h"
#include "tailrisk/crash.h"
#include "tailrisk/stats.h"

namespace tailrisk {

namespace {

constexpr int kControls = 5;
// Loadings of the confounding index on the five controls (normalized below).
constexpr std::array<double, kControls> kLoadings = {0.5, -0.4, 0.4, 0.3, -0.3};
const std::array<std::string, 6> kSectors = {"Energy", "Financials", "Health", "Industrials", "Tech", "Utilities"};
// Idiosyncratic sd of each pillar score.
constexpr double kPillarNoise = 1.5;
const double kT5Scale = std::sqrt(3.0 / 5.0);  // t5 rescaled to unit variance

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Noise {
    NoiseKind kind;
    double scale;

    double cdf(double x) const {
        const double z = x / scale;
        if (kind == NoiseKind::gaussian) return boost::math::cdf(boost::math::normal(), z);
        return boost::math::cdf(boost::math::students_t(5.0), z / kT5Scale);
    }
    double density(double x) const {
        const double z = x / scale;
        if (kind == NoiseKind::gaussian) return boost::math::pdf(boost::math::normal(), z) / scale;
        return boost::math::pdf(boost::math::students_t(5.0), z / kT5Scale) / (kT5Scale * scale);
    }
};

// Solves F(x) = target for increasing F on a bracket that is widened as needed.
template <class F>
double solve_increasing(F f, double target, double lo, double hi) {
    while (f(lo) > target) lo -= (hi - lo);
    while (f(hi) < target) hi += (hi - lo);
    auto tol = [](double a, double b) { return std::fabs(b - a) < 1e-13; };
    const auto r = boost::math::tools::bisect([&](double x) { return f(x) - target; }, lo, hi, tol);
    return 0.5 * (r.first + r.second);
}

// Tail-mode return relative to its location: with probability p a jump of
// -J is added; the body is shifted by delta(p) so the anchor quantile stays
// where it is at the base probability.
struct TailMixture {
    Noise noise;
    double jump;
    double anchor;
    double q0 = 0.0;

    double cdf(double x, double p, double delta) const {
        return (1.0 - p) * noise.cdf(x - delta) + p * noise.cdf(x - delta + jump);
    }
    double density(double x, double p, double delta) const {
        return (1.0 - p) * noise.density(x - delta) + p * noise.density(x - delta + jump);
    }
    void calibrate(double p0) {
        q0 = solve_increasing([&](double x) { return cdf(x, p0, 0.0); }, anchor, -1.0, 1.0);
    }
    double delta(double p) const {
        // cdf(q0) is decreasing in delta; Newton from 0, bisection as a fallback.
        double d = 0.0;
        for (int it = 0; it < 50; ++it) {
            const double h = cdf(q0, p, d) - anchor;
            if (std::fabs(h) < 1e-14) return d;
            const double slope = density(q0, p, d);
            if (!(slope > 1e-12)) break;
            d += h / slope;
        }
        return -solve_increasing([&](double x) { return cdf(q0, p, -x); }, anchor, -1.0, 1.0);
    }
    // Implicit derivative of delta(p).
    double delta_slope(double p, double delta) const {
        return (noise.cdf(q0 - delta + jump) - noise.cdf(q0 - delta)) / density(q0, p, delta);
    }
};

double pillar_weight_dot(const std::string& a, const std::string& b) {
    auto weights = [](const std::string& name) -> std::array<double, 3> {
        if (name == "Agg") return {1.0 / 3, 1.0 / 3, 1.0 / 3};
        if (name == "E") return {1, 0, 0};
        if (name == "S") return {0, 1, 0};
        if (name == "G") return {0, 0, 1};
        throw InputError("unknown pillar: " + name);
    };
    const auto wa = weights(a), wb = weights(b);
    return wa[0] * wb[0] + wa[1] * wb[1] + wa[2] * wb[2];
}

std::string pillar_of_column(const std::string& column) {
    if (column == "esg_lag1") return "Agg";
    if (column == "e_score_lag1") return "E";
    if (column == "s_score_lag1") return "S";
    if (column == "g_score_lag1") return "G";
    throw InputError("treatment must be esg_lag1 or a pillar lag, got " + column);
}

std::string noise_name(NoiseKind k) { return k == NoiseKind::gaussian ? "gaussian" : "t5"; }

}  // namespace

void DgpSpec::validate() const {
    if (n_firms < 50 || n_firms > 9999) throw InputError("n_firms must lie in [50, 9999]");
    if (n_months < 60) throw InputError("n_months must be at least 60");
    if (!(stress_share > 0.0 && stress_share < 0.5)) throw InputError("stress_share must lie in (0, 0.5)");
    if (!(noise_scale > 0.0)) throw InputError("noise_scale must be positive");
    if (!std::isfinite(theta_stress) || !std::isfinite(theta_normal) || !std::isfinite(confound_strength) ||
        !std::isfinite(outcome_scale)) {
        throw InputError("DGP parameters must be finite");
    }
    pillar_weight_dot(effect_pillar, effect_pillar);
    if (tail_mode) {
        if (!(jump_size > 0.0)) throw InputError("jump_size must be positive");
        for (double p : {jump_base_stress, jump_base_normal}) {
            if (!(p > 0.0 && p < 0.5)) throw InputError("jump base probabilities must lie in (0, 0.5)");
        }
        if (!(anchor_quantile > 0.0 && anchor_quantile < 1.0)) throw InputError("anchor_quantile must lie in (0, 1)");
        if (!(2.0 * std::max(jump_base_stress, jump_base_normal) < anchor_quantile)) {
            throw InputError("jump base probabilities must stay below half the anchor quantile");
        }
    }
    if (!(crash_threshold > 0.0 && crash_threshold < 1.0)) throw InputError("crash_threshold must lie in (0, 1)");
}

DgpSpec DgpSpec::from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw InputError("DGP spec must be a JSON object");
    DgpSpec s;
    static const std::vector<std::string> known = {
        "n_firms",      "n_months",         "stress_share",     "theta_stress",    "theta_normal",
        "confound_strength", "outcome_scale", "tail_mode",      "noise_scale",     "noise",
        "effect_pillar", "jump_size",       "jump_base_stress", "jump_base_normal", "crash_threshold",
        "anchor_quantile", "seed"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw InputError("unknown DGP key: " + key);
    }
    try {
        s.n_firms = j.value("n_firms", s.n_firms);
        s.n_months = j.value("n_months", s.n_months);
        s.stress_share = j.value("stress_share", s.stress_share);
        s.theta_stress = j.value("theta_stress", s.theta_stress);
        s.theta_normal = j.value("theta_normal", s.theta_normal);
        s.confound_strength = j.value("confound_strength", s.confound_strength);
        s.outcome_scale = j.value("outcome_scale", s.outcome_scale);
        s.tail_mode = j.value("tail_mode", s.tail_mode);
        s.noise_scale = j.value("noise_scale", s.noise_scale);
        const std::string noise = j.value("noise", std::string("t5"));
        if (noise == "t5") {
            s.noise = NoiseKind::student_t5;
        } else if (noise == "gaussian") {
            s.noise = NoiseKind::gaussian;
        } else {
            throw InputError("noise must be t5 or gaussian");
        }
        s.effect_pillar = j.value("effect_pillar", s.effect_pillar);
        s.jump_size = j.value("jump_size", s.jump_size);
        s.jump_base_stress = j.value("jump_base_stress", s.jump_base_stress);
        s.jump_base_normal = j.value("jump_base_normal", s.jump_base_normal);
        s.crash_threshold = j.value("crash_threshold", s.crash_threshold);
        s.anchor_quantile = j.value("anchor_quantile", s.anchor_quantile);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad DGP spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::ordered_json DgpSpec::to_json() const {
    nlohmann::ordered_json j;
    j["n_firms"] = n_firms;
    j["n_months"] = n_months;
    j["stress_share"] = stress_share;
    j["theta_stress"] = theta_stress;
    j["theta_normal"] = theta_normal;
    j["confound_strength"] = confound_strength;
    j["outcome_scale"] = outcome_scale;
    j["tail_mode"] = tail_mode;
    j["noise_scale"] = noise_scale;
    j["noise"] = noise_name(noise);
    j["effect_pillar"] = effect_pillar;
    j["jump_size"] = jump_size;
    j["jump_base_stress"] = jump_base_stress;
    j["jump_base_normal"] = jump_base_normal;
    j["crash_threshold"] = crash_threshold;
    j["anchor_quantile"] = anchor_quantile;
    j["seed"] = seed;
    return j;
}

nlohmann::ordered_json GroundTruth::to_json() const {
    nlohmann::ordered_json j;
    j["theta_stress"] = theta_stress;
    j["theta_normal"] = theta_normal;
    j["mean_effect_stress"] = mean_effect_stress;
    j["mean_effect_normal"] = mean_effect_normal;
    j["crash_sensitivity_stress"] = crash_sensitivity_stress;
    j["crash_sensitivity_normal"] = crash_sensitivity_normal;
    j["excess_attenuation"] = excess_attenuation;
    j["n_complete_rows"] = n_complete_rows;
    auto& months = j["stress_months"] = nlohmann::ordered_json::array();
    for (const auto& m : stress_months) months.push_back(m.str());
    return j;
}

std::vector<std::string> lagged_controls() {
    std::vector<std::string> out;
    for (const auto& c : kDerivedControls) out.push_back(lagged_name(c, 1));
    return out;
}

GeneratedPanel generate_panel(const DgpSpec& spec) {
    spec.validate();
    const int T = spec.n_months;
    const int N = spec.n_firms;
    const YearMonth start{2000, 1};

    // Market factor and stress months.
    std::mt19937_64 market_rng(derive_seed(spec.seed, {0x6d6b74}));
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n_stress = static_cast<int>(std::ceil(spec.stress_share * T - 1e-9));
    std::vector<int> order(static_cast<std::size_t>(T));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), market_rng);
    std::vector<bool> stress(static_cast<std::size_t>(T), false);
    for (int k = 0; k < n_stress; ++k) stress[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;
    std::vector<double> market(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        double m;
        if (stress[static_cast<std::size_t>(t)]) {
            m = -0.06 - 0.03 * std::fabs(normal(market_rng));
        } else {
            do {
                m = 0.01 + 0.035 * normal(market_rng);
            } while (m <= -0.04);
        }
        market[static_cast<std::size_t>(t)] = m;
    }

    double norm = 0.0;
    for (double a : kLoadings) norm += a * a;
    norm = std::sqrt(norm);

    const Noise noise{spec.noise, spec.noise_scale};
    TailMixture mix_stress{noise, spec.jump_size, spec.anchor_quantile};
    TailMixture mix_normal{noise, spec.jump_size, spec.anchor_quantile};
    if (spec.tail_mode) {
        mix_stress.calibrate(spec.jump_base_stress);
        mix_normal.calibrate(spec.jump_base_normal);
    }
    std::student_t_distribution<double> t5(5.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<FirmMonthRow> rows;
    rows.reserve(static_cast<std::size_t>(N) * static_cast<std::size_t>(T));
    // Per-row analysis values, in generation order (firm-major, month-minor).
    struct Latent {
        std::array<double, kControls> x_lag{};
        std::array<double, 3> pillar_lag{};
        double agg_lag = 0.0;
        bool has_lag = false;
    };
    std::vector<Latent> latent;
    latent.reserve(rows.capacity());

    double sens_mean[2] = {0.0, 0.0}, sens_crash[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};

    for (int i = 0; i < N; ++i) {
        std::mt19937_64 rng(derive_seed(spec.seed, {0x6669726d, static_cast<std::uint64_t>(i)}));
        const std::size_t sector_ix = static_cast<std::size_t>(i) % kSectors.size();
        const double sector_shift = (static_cast<double>(sector_ix) - 2.5) / 2.5;  // in [-1, 1]
        const double firm_volume = 15.0 + 0.5 * normal(rng);
        char id[16];
        std::snprintf(id, sizeof id, "F%04d", i + 1);

        // Draws for month t live at index t + 1; index 0 is the month before
        // the sample and only feeds the first month's return.
        std::array<double, kControls> x_prev{};
        std::array<double, 3> p_prev{};
        double agg_prev = 0.0;
        for (int t = -1; t < T; ++t) {
            std::array<double, kControls> x{};
            double index = 0.0;
            for (int k = 0; k < kControls; ++k) {
                x[static_cast<std::size_t>(k)] = normal(rng);
                index += kLoadings[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(k)] / norm;
            }
            const double common = spec.confound_strength * (index + 0.3 * sector_shift);
            std::array<double, 3> pil{};
            for (auto& v : pil) v = common + kPillarNoise * normal(rng);
            const double agg = (pil[0] + pil[1] + pil[2]) / 3.0;
            const double eps = spec.noise == NoiseKind::gaussian ? normal(rng) : t5(rng) * kT5Scale;
            const double u_jump = unif(rng);
            const double vol_noise = normal(rng);
            const double sig_noise = normal(rng);

            if (t >= 0) {
                const bool s = stress[static_cast<std::size_t>(t)];
                const double theta = s ? spec.theta_stress : spec.theta_normal;
                // Effect channel: the chosen score's lagged value.
                double d_eff = agg_prev;
                if (spec.effect_pillar == "E") d_eff = p_prev[0];
                if (spec.effect_pillar == "S") d_eff = p_prev[1];
                if (spec.effect_pillar == "G") d_eff = p_prev[2];
                double index_prev = 0.0;
                for (int k = 0; k < kControls; ++k) {
                    index_prev += kLoadings[static_cast<std::size_t>(k)] * x_prev[static_cast<std::size_t>(k)] / norm;
                }
                const double loc = market[static_cast<std::size_t>(t)] +
                                   spec.outcome_scale * spec.confound_strength * (index_prev + 0.2 * sector_shift);
                const double c = spec.crash_threshold;
                double ret;
                double d_mean, d_crash;
                if (spec.tail_mode) {
                    const TailMixture& mix = s ? mix_stress : mix_normal;
                    const double p0 = s ? spec.jump_base_stress : spec.jump_base_normal;
                    // p(D) = 2 p0 sigmoid(gamma D): equals p0 at D = 0 with slope
                    // theta there, and stays below 2 p0.
                    const double gamma = 2.0 * theta / p0;
                    const double sg = sigmoid(gamma * d_eff);
                    const double p = 2.0 * p0 * sg;
                    const double delta = theta == 0.0 ? 0.0 : mix.delta(p);
                    ret = loc + delta + noise.scale * eps - (u_jump < p ? spec.jump_size : 0.0);
                    if (theta == 0.0) {
                        d_mean = 0.0;
                        d_crash = 0.0;
                    } else {
                        const double dp = 2.0 * p0 * gamma * sg * (1.0 - sg);
                        const double dd = mix.delta_slope(p, delta);
                        const double z = -c - loc;
                        d_mean = (dd - spec.jump_size) * dp;
                        d_crash = (noise.cdf(z - delta + spec.jump_size) - noise.cdf(z - delta) -
                                   mix.density(z, p, delta) * dd) *
                                  dp;
                    }
                } else {
                    ret = loc + theta * d_eff + noise.scale * eps;
                    d_mean = theta;
                    d_crash = -theta * noise.density(-c - loc - theta * d_eff);
                }
                const int st = s ? 0 : 1;
                if (t >= 1) {
                    sens_mean[st] += d_mean;
                    sens_crash[st] += d_crash;
                    ++count[st];
                }

                FirmMonthRow row;
                row.firm_id = id;
                row.month = start.plus(t);
                row.ret = ret;
                row.esg = 5.0 + agg;
                row.e_score = 5.0 + pil[0];
                row.s_score = 5.0 + pil[1];
                row.g_score = 5.0 + pil[2];
                row.volume_usd = std::exp(firm_volume + 0.2 * vol_noise);
                row.sigma = 0.015 * std::exp(0.25 * sig_noise);
                const double at = std::exp(6.0 + x[0]);
                row.fundamentals["at"] = at;
                row.fundamentals["dltt"] = at * (0.3 + 0.1 * x[1]);
                row.fundamentals["ib"] = at * (0.05 + 0.05 * x[2]);
                row.fundamentals["capx"] = at * (0.05 + 0.02 * x[3]);
                row.fundamentals["ppent"] = at * (0.3 + 0.1 * x[4]);
                row.sector = kSectors[sector_ix];
                rows.push_back(std::move(row));
                latent.push_back({x_prev, p_prev, agg_prev, t >= 1});
            }
            x_prev = x;
            p_prev = pil;
            agg_prev = agg;
        }
    }

    GeneratedPanel out;
    out.panel = PanelDataset(std::move(rows));
    // PanelDataset sorts by (firm, month); ids are zero-padded and months are
    // generated in order, so the order is unchanged.
    const std::size_t n = out.panel.size();
    std::vector<std::string> controls = lagged_controls();
    std::vector<Column> control_cols(kControls, Column(n));
    Column esg_lag(n), e_lag(n), s_lag(n), g_lag(n), excess(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& row = out.panel.rows()[r];
        const int t = row.month.index() - start.index();
        excess[r] = *row.ret - market[static_cast<std::size_t>(t)];
        const Latent& l = latent[r];
        if (!l.has_lag) continue;
        for (int k = 0; k < kControls; ++k) {
            control_cols[static_cast<std::size_t>(k)][r] = l.x_lag[static_cast<std::size_t>(k)];
        }
        esg_lag[r] = 5.0 + l.agg_lag;
        e_lag[r] = 5.0 + l.pillar_lag[0];
        s_lag[r] = 5.0 + l.pillar_lag[1];
        g_lag[r] = 5.0 + l.pillar_lag[2];
    }
    for (int k = 0; k < kControls; ++k) {
        out.panel.set_derived(controls[static_cast<std::size_t>(k)], std::move(control_cols[static_cast<std::size_t>(k)]));
    }
    out.panel.set_derived("esg_lag1", std::move(esg_lag));
    out.panel.set_derived("e_score_lag1", std::move(e_lag));
    out.panel.set_derived("s_score_lag1", std::move(s_lag));
    out.panel.set_derived("g_score_lag1", std::move(g_lag));
    out.panel.set_derived("excess_ret", std::move(excess));
    out.panel.set_derived(crash_column(spec.crash_threshold), crash_indicator(out.panel, spec.crash_threshold));
    out.panel.set_control_columns(controls);

    RegimeSeries& reg = out.regime;
    reg.quantile_level = spec.stress_share;
    reg.cutoff = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < T; ++t) {
        reg.months.push_back(start.plus(t));
        reg.market_return.push_back(market[static_cast<std::size_t>(t)]);
        reg.stress.push_back(stress[static_cast<std::size_t>(t)]);
        if (stress[static_cast<std::size_t>(t)]) reg.cutoff = std::max(reg.cutoff, market[static_cast<std::size_t>(t)]);
    }

    GroundTruth& g = out.truth;
    g.theta_stress = spec.theta_stress;
    g.theta_normal = spec.theta_normal;
    g.mean_effect_stress = count[0] ? sens_mean[0] / static_cast<double>(count[0]) : 0.0;
    g.mean_effect_normal = count[1] ? sens_mean[1] / static_cast<double>(count[1]) : 0.0;
    if (!spec.tail_mode) {
        g.mean_effect_stress = spec.theta_stress;
        g.mean_effect_normal = spec.theta_normal;
    }
    g.crash_sensitivity_stress = count[0] ? sens_crash[0] / static_cast<double>(count[0]) : 0.0;
    g.crash_sensitivity_normal = count[1] ? sens_crash[1] / static_cast<double>(count[1]) : 0.0;
    g.excess_attenuation = 1.0 - 1.0 / static_cast<double>(N);
    g.stress_months = reg.months_in(true);
    g.market_factor = market;
    g.n_complete_rows = count[0] + count[1];
    return out;
}

EstimatorDescriptor EstimatorDescriptor::from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw InputError("estimator descriptor must be a JSON object");
    EstimatorDescriptor e;
    try {
        e.name = j.value("name", e.name);
        e.outcome = j.value("outcome", e.outcome);
        e.treatment = j.value("treatment", e.treatment);
        e.regime = j.value("regime", e.regime);
        e.n_folds = j.value("n_folds", e.n_folds);
        e.sector_dummies = j.value("sector_dummies", e.sector_dummies);
        if (j.contains("learner")) e.learner.kind = parse_learner_kind(j.at("learner").get<std::string>());
        if (j.contains("grid")) {
            for (const auto& point : j.at("grid")) {
                e.learner.grid.push_back(hyperparameters_from_json(e.learner.kind, point));
            }
        }
        e.learner.cv_folds = j.value("cv_folds", e.learner.cv_folds);
    } catch (const nlohmann::json::exception& ex) {
        throw InputError(std::string("bad estimator descriptor: ") + ex.what());
    }
    if (e.name != "dml" && e.name != "naive_ols") throw InputError("estimator must be dml or naive_ols");
    if (e.regime != "all" && e.regime != "stress" && e.regime != "nonstress") {
        throw InputError("regime must be all, stress or nonstress");
    }
    if (e.n_folds < 2) throw InputError("n_folds must be at least 2");
    return e;
}

nlohmann::ordered_json EstimatorDescriptor::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["outcome"] = outcome;
    j["treatment"] = treatment;
    j["regime"] = regime;
    if (name == "dml") {
        j["learner"] = to_string(learner.kind);
        j["n_folds"] = n_folds;
        j["cv_folds"] = learner.cv_folds;
        auto& grid = j["grid"] = nlohmann::ordered_json::array();
        for (const auto& h : learner.grid) grid.push_back(tailrisk::to_json(h));
    }
    j["sector_dummies"] = sector_dummies;
    return j;
}

double target_effect(const EstimatorDescriptor& est, const DgpSpec& dgp, const GroundTruth& truth) {
    // Share of the effect loading on the chosen treatment: regressing the
    // effect score's idiosyncratic part on the treatment's.
    const std::string pillar = pillar_of_column(est.treatment);
    const double share = pillar_weight_dot(pillar, dgp.effect_pillar) / pillar_weight_dot(pillar, pillar);

    double stress_effect, normal_effect;
    if (est.outcome == "excess_ret" || est.outcome == "ret") {
        stress_effect = truth.mean_effect_stress;
        normal_effect = truth.mean_effect_normal;
    } else if (est.outcome == crash_column(dgp.crash_threshold)) {
        stress_effect = truth.crash_sensitivity_stress;
        normal_effect = truth.crash_sensitivity_normal;
    } else {
        throw InputError("no ground truth for outcome " + est.outcome);
    }
    if (est.regime == "stress") return share * stress_effect;
    if (est.regime == "nonstress") return share * normal_effect;
    const double w = static_cast<double>(truth.stress_months.size()) / static_cast<double>(dgp.n_months);
    return share * (w * stress_effect + (1.0 - w) * normal_effect);
}

EstimatorOutput run_estimator(const EstimatorDescriptor& est, const GeneratedPanel& data, std::uint64_t seed) {
    if (est.name == "dml") {
        DmlConfig c;
        c.outcome = est.outcome;
        c.treatment = est.treatment;
        c.learner = est.learner;
        c.n_folds = est.n_folds;
        c.regime = est.regime;
        c.seed = seed;
        c.controls = lagged_controls();
        c.sector_dummies = est.sector_dummies;
        const DmlEstimate e = estimate_dml(data.panel, data.regime, c, 1);
        return {e.beta, e.se, e.p};
    }
    if (est.name == "naive_ols") {
        const PanelDataset panel = ensure_outcome_column(data.panel, est.outcome);
        const Column y = panel.column(est.outcome);
        const Column d = panel.column(est.treatment);
        std::vector<double> yv, dv;
        std::vector<int> month;
        for (std::size_t r = 0; r < panel.size(); ++r) {
            const auto s = data.regime.stress_of(panel.rows()[r].month);
            if (!s || !y[r] || !d[r]) continue;
            if (est.regime != "all" && *s != (est.regime == "stress")) continue;
            yv.push_back(*y[r]);
            dv.push_back(*d[r]);
            month.push_back(panel.rows()[r].month.index());
        }
        if (yv.empty()) throw EstimationError("no complete rows");
        Eigen::Map<Eigen::VectorXd> Y(yv.data(), static_cast<Eigen::Index>(yv.size()));
        Eigen::Map<Eigen::VectorXd> D(dv.data(), static_cast<Eigen::Index>(dv.size()));
        // Intercept handled by centering.
        const Eigen::VectorXd yc = Y.array() - Y.mean();
        const Eigen::VectorXd dc = D.array() - D.mean();
        const DmlEstimate e = final_stage(yc, dc, month);
        return {e.beta, e.se, e.p};
    }
    throw InputError("unknown estimator: " + est.name);
}

nlohmann::ordered_json SimResult::to_json() const {
    nlohmann::ordered_json j;
    j["estimator"] = estimator;
    j["replications"] = replications;
    j["n_failed"] = n_failed;
    j["mean_bias"] = mean_bias;
    j["rmse"] = rmse;
    j["coverage"] = coverage;
    j["rejection_rate"] = rejection_rate;
    j["mean_estimate"] = mean_estimate;
    j["mean_truth"] = mean_truth;
    j["mean_se"] = mean_se;
    j["sd_estimate"] = sd_estimate;
    j["seconds_per_replication"] = seconds_per_replication;
    j["failure_log"] = failure_log;
    return j;
}

SimResult monte_carlo(const DgpSpec& dgp, const EstimatorDescriptor& est, int replications, int threads) {
    if (replications < 100) throw InputError("Monte Carlo needs at least 100 replications");
    dgp.validate();
    pillar_of_column(est.treatment);

    struct Rep {
        bool ok = false;
        EstimatorOutput out;
        double truth = 0.0;
        std::string error;
    };
    std::vector<Rep> reps(static_cast<std::size_t>(replications));
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(reps.size(), threads, [&](std::size_t r) {
        DgpSpec spec = dgp;
        spec.seed = derive_seed(dgp.seed, {r});
        try {
            const GeneratedPanel data = generate_panel(spec);
            reps[r].truth = target_effect(est, dgp, data.truth);
            reps[r].out = run_estimator(est, data, derive_seed(dgp.seed, {r, 1}));
            reps[r].ok = std::isfinite(reps[r].out.beta) && std::isfinite(reps[r].out.se);
            if (!reps[r].ok) reps[r].error = "non-finite estimate";
        } catch (const InputError&) {
            throw;
        } catch (const std::exception& e) {
            reps[r].error = e.what();
        }
    });
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    SimResult res;
    res.estimator = est.name == "dml" ? "dml/" + to_string(est.learner.kind) : est.name;
    res.replications = replications;
    double sum_err = 0.0, sum_sq = 0.0, sum_est = 0.0, sum_truth = 0.0, sum_se = 0.0;
    int covered = 0, rejected = 0, ok = 0;
    for (std::size_t r = 0; r < reps.size(); ++r) {
        const Rep& rep = reps[r];
        if (!rep.ok) {
            ++res.n_failed;
            res.failure_log.push_back("replication " + std::to_string(r) + ": " + rep.error);
            continue;
        }
        ++ok;
        const double err = rep.out.beta - rep.truth;
        sum_err += err;
        sum_sq += err * err;
        sum_est += rep.out.beta;
        sum_truth += rep.truth;
        sum_se += rep.out.se;
        res.estimates.push_back(rep.out.beta);
        if (std::fabs(err) <= 1.959963984540054 * rep.out.se) ++covered;
        if (rep.out.p < 0.05) ++rejected;
    }
    if (res.n_failed > 0.05 * replications) {
        std::string msg = std::to_string(res.n_failed) + " of " + std::to_string(replications) +
                          " replications failed (more than 5%)";
        if (!res.failure_log.empty()) msg += "; first: " + res.failure_log.front();
        throw EstimationError(msg);
    }
    const double k = static_cast<double>(ok);
    res.mean_bias = sum_err / k;
    res.rmse = std::sqrt(sum_sq / k);
    res.coverage = covered / k;
    res.rejection_rate = rejected / k;
    res.mean_estimate = sum_est / k;
    res.mean_truth = sum_truth / k;
    res.mean_se = sum_se / k;
    res.sd_estimate = sample_sd(res.estimates);
    res.seconds_per_replication = elapsed * std::max(1, threads <= 0 ? default_threads() : threads) / replications;
    return res;
}

}  // namespace tailrisk
