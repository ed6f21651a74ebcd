#include "tailrisk/bootstrap.h"

#include <algorithm>
#include <random>

#include "tailrisk/stats.h"

namespace tailrisk {

std::map<int, int> BootstrapReplicate::multiplicity() const {
    std::map<int, int> out;
    for (const auto& m : stress_months) ++out[m.index()];
    for (const auto& m : nonstress_months) ++out[m.index()];
    return out;
}

BootstrapReplicate draw_replicate(const RegimeSeries& regime, std::uint64_t seed, std::size_t r) {
    const auto stress = regime.months_in(true);
    const auto calm = regime.months_in(false);
    if (stress.empty()) throw InputError("bootstrap needs at least one stress month");
    if (calm.empty()) throw InputError("bootstrap needs at least one non-stress month");

    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    BootstrapReplicate rep;
    std::uniform_int_distribution<std::size_t> pick_stress(0, stress.size() - 1);
    for (std::size_t k = 0; k < stress.size(); ++k) rep.stress_months.push_back(stress[pick_stress(rng)]);
    std::uniform_int_distribution<std::size_t> pick_calm(0, calm.size() - 1);
    for (std::size_t k = 0; k < calm.size(); ++k) rep.nonstress_months.push_back(calm[pick_calm(rng)]);
    return rep;
}

std::vector<BootstrapReplicate> stratified_month_block_bootstrap(const RegimeSeries& regime, std::size_t n_boot,
                                                                 std::uint64_t seed) {
    std::vector<BootstrapReplicate> out;
    out.reserve(n_boot);
    for (std::size_t r = 0; r < n_boot; ++r) out.push_back(draw_replicate(regime, seed, r));
    return out;
}

std::vector<std::size_t> replicate_rows(const PanelDataset& panel, const BootstrapReplicate& replicate) {
    std::map<int, const std::vector<std::size_t>*> by_month;
    const auto groups = panel.rows_by_month();
    for (std::size_t k = 0; k < panel.months().size(); ++k) by_month[panel.months()[k].index()] = &groups[k];

    std::vector<std::size_t> out;
    auto append = [&](const std::vector<YearMonth>& months) {
        for (const auto& m : months) {
            auto it = by_month.find(m.index());
            if (it == by_month.end()) continue;
            out.insert(out.end(), it->second->begin(), it->second->end());
        }
    };
    append(replicate.stress_months);
    append(replicate.nonstress_months);
    return out;
}

PercentileCi percentile_ci(std::vector<double> estimates, double level) {
    if (estimates.empty()) throw EstimationError("no bootstrap estimates to summarize");
    std::sort(estimates.begin(), estimates.end());
    PercentileCi ci;
    ci.n = estimates.size();
    ci.lower = percentile_sorted(estimates, (1.0 - level) / 2.0);
    ci.median = percentile_sorted(estimates, 0.5);
    ci.upper = percentile_sorted(estimates, (1.0 + level) / 2.0);
    return ci;
}

}  // namespace tailrisk
