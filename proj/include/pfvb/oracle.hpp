#pragma once

// Ground-truth machinery used by the test suites and by comparison runs:
// a data-augmentation Gibbs sampler, 1-D quadrature of the exact posterior,
// and a Newton solver for the partially-factorized fixed point. Not part of
// the umbrella header.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pfvb/error.hpp"
#include "pfvb/kernel.hpp"
#include "pfvb/mean_field.hpp"
#include "pfvb/partial_factorized.hpp"
#include "pfvb/rng.hpp"
#include "pfvb/truncnorm.hpp"

namespace pfvb::oracle {

inline constexpr Eigen::Index kGibbsMaxN = 200;
inline constexpr Eigen::Index kGibbsMaxP = 1000;

struct GibbsOptions {
  Eigen::Index n_draws = 20000;
  Eigen::Index burn_in = 5000;
  Eigen::Index thin = 5;
  bool keep_z = false;
  bool enforce_scale_policy = true;
};

struct GibbsChain {
  Eigen::MatrixXd draws_beta;  // n_draws x p
  std::optional<Eigen::MatrixXd> draws_z;
  Eigen::Index burn_in = 0;
  Eigen::Index thin = 1;
  std::uint64_t seed = 0;
};

inline bool within_gibbs_scale_policy(Eigen::Index n, Eigen::Index p) noexcept {
  return n <= kGibbsMaxN && p <= kGibbsMaxP;
}

/// Albert-Chib sampler alternating beta | z ~ N(VX'z, V) and
/// z_i | beta ~ TN(x_i' beta, 1) on the side of 2y_i - 1.
inline GibbsChain gibbs_sample(const KernelPrecomp& precomp, const GibbsOptions& opts, std::uint64_t seed) {
  const Dataset& data = precomp.data();
  const Eigen::Index n = data.n();
  const Eigen::Index p = data.p();
  if (opts.enforce_scale_policy && !within_gibbs_scale_policy(n, p)) {
    throw ScalePolicyExceeded("Gibbs oracle limited to n <= 200 and p <= 1000");
  }
  if (opts.n_draws < 1 || opts.thin < 1 || opts.burn_in < 0) {
    throw InvalidArgument("Gibbs needs n_draws >= 1, thin >= 1, burn_in >= 0");
  }

  Rng rng(seed);
  GibbsChain chain;
  chain.burn_in = opts.burn_in;
  chain.thin = opts.thin;
  chain.seed = seed;
  chain.draws_beta.resize(opts.n_draws, p);
  if (opts.keep_z) chain.draws_z = Eigen::MatrixXd(opts.n_draws, n);

  std::vector<Side> side(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) side[static_cast<std::size_t>(i)] = side_from_label(data.y[i]);

  Eigen::VectorXd z(n);
  Eigen::VectorXd beta(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  const auto draw_z = [&] {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = tn_sample({eta[i], 1.0, side[static_cast<std::size_t>(i)]}, rng);
  };
  draw_z();

  const Eigen::Index total = opts.burn_in + opts.n_draws * opts.thin;
  Eigen::Index kept = 0;
  for (Eigen::Index it = 1; it <= total; ++it) {
    precomp.sample_gaussian(rng, beta);
    beta.noalias() += precomp.vxt() * z;
    eta.noalias() = data.x * beta;
    draw_z();
    if (it > opts.burn_in && (it - opts.burn_in) % opts.thin == 0) {
      chain.draws_beta.row(kept) = beta.transpose();
      if (chain.draws_z) chain.draws_z->row(kept) = z.transpose();
      ++kept;
    }
  }
  return chain;
}

struct DensityTable {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;
  double mean = 0.0;
  double variance = 0.0;
};

/// Uniform grid spanning +-half_width_sds prior standard deviations.
inline Eigen::VectorXd default_grid_1d(double prior_variance, Eigen::Index points = 20001,
                                       double half_width_sds = 10.0) {
  const double half = half_width_sds * std::sqrt(prior_variance);
  return Eigen::VectorXd::LinSpaced(points, -half, half);
}

inline double trapezoid(const Eigen::VectorXd& x, const Eigen::VectorXd& f) {
  double acc = 0.0;
  for (Eigen::Index k = 1; k < x.size(); ++k) acc += 0.5 * (x[k] - x[k - 1]) * (f[k] + f[k - 1]);
  return acc;
}

/// Exact posterior of a single coefficient, normalized on the grid by the
/// trapezoid rule.
inline DensityTable exact_posterior_quadrature_1d(const Dataset& data, double prior_variance,
                                                  const Eigen::VectorXd& grid) {
  if (data.p() != 1) throw InvalidArgument("exact_posterior_quadrature_1d needs p = 1");
  if (grid.size() < 3) throw InvalidArgument("quadrature grid needs at least 3 points");
  DensityTable out;
  out.grid = grid;
  Eigen::VectorXd logk(grid.size());
  Eigen::VectorXd beta(1);
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    beta[0] = grid[k];
    logk[k] = mf_log_posterior(data, prior_variance, beta);
  }
  out.density = (logk.array() - logk.maxCoeff()).exp().matrix();
  out.density /= trapezoid(grid, out.density);
  out.mean = trapezoid(grid, grid.cwiseProduct(out.density));
  out.variance = trapezoid(grid, (grid.array() - out.mean).square().matrix().cwiseProduct(out.density));
  return out;
}

inline constexpr Eigen::Index kDirectSolveMaxN = 50;

/// Newton iteration with backtracking on
///   F(mu)_i = mu_i - sigma_i^2 sum_{k != i} H_ik zbar_k(mu_k)
/// using a dense LU solve per step.
inline Eigen::VectorXd solve_fixed_point_direct(const KernelPrecomp& precomp, double tol = 1e-11,
                                                int max_iter = 200) {
  const Eigen::Index n = precomp.n();
  if (n > kDirectSolveMaxN) throw ScalePolicyExceeded("direct fixed-point solve limited to n <= 50");
  const Dataset& data = precomp.data();
  const Eigen::VectorXd& s2 = precomp.sigma_star2();
  Eigen::MatrixXd h_off = precomp.h();
  h_off.diagonal().setZero();
  const Eigen::MatrixXd coupling = s2.asDiagonal() * h_off;

  const auto latent = [&](const Eigen::VectorXd& mu, Eigen::Index i) {
    return TruncNormParams{mu[i], std::sqrt(s2[i]), side_from_label(data.y[i])};
  };
  const auto residual = [&](const Eigen::VectorXd& mu) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = tn_mean(latent(mu, i));
    return Eigen::VectorXd(mu - coupling * z);
  };

  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd f = residual(mu);
  for (int it = 0; it < max_iter; ++it) {
    if (f.lpNorm<Eigen::Infinity>() < tol) return mu;
    // d zbar_i / d mu_i = var(z_i) / sigma_i^2
    Eigen::VectorXd slope(n);
    for (Eigen::Index i = 0; i < n; ++i) slope[i] = tn_var(latent(mu, i)) / s2[i];
    Eigen::MatrixXd jac = -coupling * slope.asDiagonal();
    jac.diagonal().array() += 1.0;
    const Eigen::VectorXd step = jac.partialPivLu().solve(-f);
    double lambda = 1.0;
    Eigen::VectorXd trial = mu + step;
    Eigen::VectorXd f_trial = residual(trial);
    while (f_trial.norm() >= f.norm() && lambda > 1e-8) {
      lambda *= 0.5;
      trial = mu + lambda * step;
      f_trial = residual(trial);
    }
    mu = trial;
    f = f_trial;
  }
  if (f.lpNorm<Eigen::Infinity>() < tol) return mu;
  throw NonConvergence("direct fixed-point solve did not reach the residual tolerance");
}

}  // namespace pfvb::oracle
