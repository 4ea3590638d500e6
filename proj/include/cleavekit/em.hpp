#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cleavekit/core.hpp"

namespace cleave::em {

struct TooFewSamples : Error {
  using Error::Error;
};
struct DegenerateFit : Error {
  using Error::Error;
};
struct NumericalUnderflow : Error {
  using Error::Error;
};

inline constexpr double kDefaultMinStd = 0.05;  // hours; variance floor

struct EmConfig {
  int max_iters = 500;
  double loglik_tol = 1e-6;
  double min_std = kDefaultMinStd;
  std::uint64_t seed = 0;  // reserved; the fit itself is deterministic

  void validate() const;
};

struct EmTrace {
  std::vector<double> log_likelihood;  // one entry per iteration
  int iterations_run = 0;
  bool converged = false;
  int component_rescues = 0;
};

/// Deterministic start: k quantile groups of the sorted samples, one
/// component per group with equal weights.
std::vector<GaussianComponent> init_components(const std::vector<double>& samples,
                                               int k = 5,
                                               double min_std = kDefaultMinStd);

/// Posterior responsibilities, computed in log space; every row sums to 1.
std::vector<std::vector<double>> e_step(
    const std::vector<double>& samples,
    const std::vector<GaussianComponent>& components);

/// Weighted moment update. A component whose responsibility column collapses
/// (< 1e-12 total) is re-seeded at the sample least explained by the current
/// mixture; `rescues` counts such events.
std::vector<GaussianComponent> m_step(
    const std::vector<double>& samples,
    const std::vector<std::vector<double>>& responsibilities,
    const std::vector<GaussianComponent>& current, double min_std,
    int* rescues = nullptr);

double log_likelihood(const std::vector<double>& samples,
                      const std::vector<GaussianComponent>& components);

/// t3 calibration surrogate: mean one t4-std below the t4 mean, std half of
/// t4's. The weight carries over from the input component.
GaussianComponent derive_t3(const GaussianComponent& t4);

/// Plain k-component fit on unlabeled samples (no label assignment).
std::pair<std::vector<GaussianComponent>, EmTrace> fit_components(
    const std::vector<double>& samples, int k, const EmConfig& cfg);

/// Full 5-mode fit: components are sorted by mean, labeled t2..t8, the t3
/// slot is replaced by the derive_t3 surrogate (keeping the fitted t3
/// weight), and the fitted t3 population is preserved as a 2-mode
/// submixture when enough samples support one.
std::pair<ActMixture, EmTrace> fit(const std::vector<double>& samples,
                                   const EmConfig& cfg = {});

}  // namespace cleave::em
