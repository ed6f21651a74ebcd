#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tailrisk {

double mean(std::span<const double> x);
// Sample standard deviation (n - 1 denominator). Zero for n < 2.
double sample_sd(std::span<const double> x);

// Linear-interpolation percentile on sorted data (Hyndman-Fan type 7).
double percentile_sorted(std::span<const double> sorted, double p);
double percentile(std::vector<double> x, double p);

// Lower empirical quantile: the ceil(level * n)-th order statistic (1-based),
// clamped to [1, n].
double lower_empirical_quantile(std::vector<double> x, double level);

double normal_cdf(double z);
double two_sided_normal_p(double z);

// SplitMix64 finalizer; used to derive independent stream seeds from a base
// seed and a sequence of integer keys.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);
// Uniform in [0, 1) from a counter-based hash.
double hash_uniform(std::uint64_t seed, std::uint64_t key);
std::uint64_t hash_string(std::string_view text);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// processed exactly once; callers write results into pre-sized slots so the
// outcome never depends on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// Process-wide default used when a call site passes threads <= 0.
void set_default_threads(int threads);
int default_threads();

}  // namespace tailrisk
