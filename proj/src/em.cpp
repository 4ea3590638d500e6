#include "cleavekit/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cleave::em {

void EmConfig::validate() const {
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(loglik_tol > 0.0)) throw ValidationError("loglik_tol must be > 0");
  if (!(min_std > 0.0)) throw ValidationError("min_std must be > 0");
}

std::vector<GaussianComponent> init_components(const std::vector<double>& samples,
                                               int k, double min_std) {
  const int n = static_cast<int>(samples.size());
  if (n < k) {
    throw TooFewSamples("need at least " + std::to_string(k) + " samples, got " +
                        std::to_string(n));
  }
  for (double s : samples) {
    if (!std::isfinite(s)) throw ValidationError("non-finite sample");
  }
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());

  std::vector<GaussianComponent> comps(static_cast<size_t>(k));
  for (int g = 0; g < k; ++g) {
    const int lo = g * n / k;
    const int hi = (g + 1) * n / k;
    double mean = 0;
    for (int i = lo; i < hi; ++i) mean += sorted[static_cast<size_t>(i)];
    mean /= (hi - lo);
    double var = 0;
    for (int i = lo; i < hi; ++i) {
      const double d = sorted[static_cast<size_t>(i)] - mean;
      var += d * d;
    }
    var /= (hi - lo);
    comps[static_cast<size_t>(g)] = {mean, std::max(std::sqrt(var), min_std),
                                     1.0 / k};
  }
  return comps;
}

namespace {
// Responsibilities plus the total log-likelihood in one pass.
std::pair<std::vector<std::vector<double>>, double> e_step_with_ll(
    const std::vector<double>& samples,
    const std::vector<GaussianComponent>& comps) {
  const size_t n = samples.size();
  const size_t k = comps.size();
  std::vector<std::vector<double>> resp(n, std::vector<double>(k));
  std::vector<double> lw(k);
  double ll = 0;
  for (size_t j = 0; j < k; ++j) {
    if (!(comps[j].std > 0)) throw ValidationError("component std must be > 0");
  }
  for (size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < k; ++j) {
      lw[j] = std::log(comps[j].weight) + gaussian_log_pdf(samples[i], comps[j]);
      mx = std::max(mx, lw[j]);
    }
    if (!std::isfinite(mx)) {
      throw NumericalUnderflow("zero total density for sample " +
                               std::to_string(i));
    }
    double sum = 0;
    for (size_t j = 0; j < k; ++j) {
      resp[i][j] = std::exp(lw[j] - mx);
      sum += resp[i][j];
    }
    for (size_t j = 0; j < k; ++j) resp[i][j] /= sum;
    ll += mx + std::log(sum);
  }
  return {std::move(resp), ll};
}
}  // namespace

std::vector<std::vector<double>> e_step(
    const std::vector<double>& samples,
    const std::vector<GaussianComponent>& components) {
  return e_step_with_ll(samples, components).first;
}

double log_likelihood(const std::vector<double>& samples,
                      const std::vector<GaussianComponent>& components) {
  double ll = 0;
  for (double x : samples) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lw(components.size());
    for (size_t j = 0; j < components.size(); ++j) {
      lw[j] = std::log(components[j].weight) + gaussian_log_pdf(x, components[j]);
      mx = std::max(mx, lw[j]);
    }
    double sum = 0;
    for (double v : lw) sum += std::exp(v - mx);
    ll += mx + std::log(sum);
  }
  return ll;
}

std::vector<GaussianComponent> m_step(
    const std::vector<double>& samples,
    const std::vector<std::vector<double>>& resp,
    const std::vector<GaussianComponent>& current, double min_std,
    int* rescues) {
  const size_t n = samples.size();
  const size_t k = current.size();
  std::vector<GaussianComponent> out(k);
  for (size_t j = 0; j < k; ++j) {
    double nk = 0, sx = 0;
    for (size_t i = 0; i < n; ++i) {
      nk += resp[i][j];
      sx += resp[i][j] * samples[i];
    }
    if (nk < 1e-12) {
      // Re-seed at the sample the mixture currently explains worst.
      size_t worst = 0;
      double worst_density = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < n; ++i) {
        double d = 0;
        for (size_t c = 0; c < k; ++c) {
          d += current[c].weight * gaussian_pdf(samples[i], current[c]);
        }
        if (d < worst_density) {
          worst_density = d;
          worst = i;
        }
      }
      out[j] = {samples[worst], min_std, 1.0 / static_cast<double>(n)};
      if (rescues) ++*rescues;
      continue;
    }
    const double mean = sx / nk;
    double var = 0;
    for (size_t i = 0; i < n; ++i) {
      const double d = samples[i] - mean;
      var += resp[i][j] * d * d;
    }
    var /= nk;
    out[j] = {mean, std::max(std::sqrt(var), min_std),
              nk / static_cast<double>(n)};
  }
  // Re-normalize; rescues perturb the column sums.
  double wsum = 0;
  for (const auto& c : out) wsum += c.weight;
  for (auto& c : out) c.weight /= wsum;
  return out;
}

GaussianComponent derive_t3(const GaussianComponent& t4) {
  return {t4.mean - t4.std, t4.std / 2.0, t4.weight};
}

std::pair<std::vector<GaussianComponent>, EmTrace> fit_components(
    const std::vector<double>& samples, int k, const EmConfig& cfg) {
  cfg.validate();
  EmTrace trace;
  std::vector<GaussianComponent> comps = init_components(samples, k, cfg.min_std);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    auto [resp, ll] = e_step_with_ll(samples, comps);
    trace.log_likelihood.push_back(ll);
    trace.iterations_run = iter + 1;
    if (std::abs(ll - prev_ll) < cfg.loglik_tol) {
      trace.converged = true;
      break;
    }
    prev_ll = ll;
    comps = m_step(samples, resp, comps, cfg.min_std, &trace.component_rescues);
  }
  return {std::move(comps), std::move(trace)};
}

std::pair<ActMixture, EmTrace> fit(const std::vector<double>& samples,
                                   const EmConfig& cfg) {
  auto [comps, trace] = fit_components(samples, 5, cfg);
  std::sort(comps.begin(), comps.end(),
            [](const GaussianComponent& a, const GaussianComponent& b) {
              return a.mean < b.mean;
            });
  // Adjacent modes closer than the variance floor cannot be told apart;
  // that is the collapsed-fit signature.
  for (size_t i = 1; i < comps.size(); ++i) {
    if (comps[i].mean - comps[i - 1].mean <= cfg.min_std) {
      throw DegenerateFit("fitted means not increasing (modes " +
                          std::to_string(i - 1) + "/" + std::to_string(i) +
                          ")");
    }
  }

  ActMixture m;
  for (size_t i = 0; i < 5; ++i) m.modes[i] = comps[i];

  // The fitted t3 population keeps its own 2-mode decomposition; the t3 slot
  // used for calibration is the surrogate derived from t4.
  auto resp = e_step(samples, comps);
  std::vector<double> t3_samples;
  for (size_t i = 0; i < samples.size(); ++i) {
    size_t best = 0;
    for (size_t j = 1; j < 5; ++j) {
      if (resp[i][j] > resp[i][best]) best = j;
    }
    if (best == 1) t3_samples.push_back(samples[i]);
  }
  if (t3_samples.size() >= 8) {
    try {
      EmConfig sub_cfg = cfg;
      auto [sub, sub_trace] = fit_components(t3_samples, 2, sub_cfg);
      (void)sub_trace;
      std::sort(sub.begin(), sub.end(),
                [](const GaussianComponent& a, const GaussianComponent& b) {
                  return a.mean < b.mean;
                });
      if (sub[1].mean - sub[0].mean > cfg.min_std) {
        m.t3_submixture = {{sub[0], sub[1]}};
      }
    } catch (const Error&) {
      // A t3 population too tight for two modes is fine; leave it out.
    }
  }

  GaussianComponent surrogate = derive_t3(m.modes[2]);
  surrogate.std = std::max(surrogate.std, cfg.min_std);
  surrogate.weight = m.modes[1].weight;  // keep the mode weights summing to 1
  m.modes[1] = surrogate;

  for (size_t i = 1; i < 5; ++i) {
    if (!(m.modes[i].mean > m.modes[i - 1].mean)) {
      throw DegenerateFit("t3 surrogate breaks the mode order");
    }
  }
  m.validate();
  return {std::move(m), std::move(trace)};
}

}  // namespace cleave::em
