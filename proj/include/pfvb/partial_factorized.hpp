#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pfvb/error.hpp"
#include "pfvb/kernel.hpp"
#include "pfvb/rng.hpp"
#include "pfvb/truncnorm.hpp"

namespace pfvb {

/// How mu_i is formed inside a sweep.
enum class SweepRule {
  Auto,            // HRow when p > n, AlphaRecursion otherwise
  HRow,            // mu_i = sigma_i^2 sum_{k != i} H_ik z_k, O(n) per unit
  AlphaRecursion,  // mu_i = sigma_i^2 (XV)_i. alpha^(i), alpha updated in O(p) per unit
};

struct PfmOptions {
  int max_iter = 1000;
  double tolerance = 1e-6;  // absolute ELBO change between sweeps
  std::optional<double> mu_tolerance;  // when set, max |mu change| must also fall below it
  std::optional<Eigen::VectorXd> z_init;  // defaults to 0
  SweepRule rule = SweepRule::Auto;
  bool record_history = false;
};

/// Partially-factorized solution q(beta | z) prod_i q(z_i) with
/// q(z_i) = TN(mu_i, sigma_i^2) on the side of 2y_i - 1.
struct PfmPosterior {
  std::shared_ptr<const KernelPrecomp> precomp;
  Eigen::VectorXd mu_star;
  Eigen::VectorXd sigma_star;
  Eigen::VectorXd z_bar_star;
  std::vector<double> elbo_trace;  // after each sweep, additive constant dropped
  int iterations = 0;              // sweeps taken before the ELBO change fell below tolerance
  int sweeps = 0;                  // sweeps actually run (iterations + 1 when converged)
  bool converged = false;
  SweepRule rule_used = SweepRule::HRow;
  std::vector<Eigen::VectorXd> mu_history;  // filled when record_history is set
  std::vector<Eigen::VectorXd> z_history;

  TruncNormParams latent(Eigen::Index i) const {
    return {mu_star[i], sigma_star[i], side_from_label(precomp->data().y[i])};
  }
};

/// ELBO of the current latent factors, up to the constant
/// sum_i log sigma_i - log det(I + nu^2 XX') / 2:
///   -1/2 sum_i { L_ii E z_i^2 - 2 log Phi(s_i mu_i / sigma_i) - E z_i^2 / sigma_i^2
///                + 2 zbar_i mu_i / sigma_i^2 - (mu_i / sigma_i)^2 }
///   - sum_{i > j} L_ij zbar_i zbar_j,
/// with L = I - H and E z_i^2 = mu_i^2 + sigma_i^2 + s_i mu_i sigma_i zeta(s_i mu_i / sigma_i).
inline double pfm_elbo(const KernelPrecomp& precomp, const Eigen::Ref<const Eigen::VectorXd>& mu,
                       const Eigen::Ref<const Eigen::VectorXd>& z_bar) {
  const Eigen::Index n = precomp.n();
  if (mu.size() != n) throw DimensionMismatch("mu", n, mu.size());
  if (z_bar.size() != n) throw DimensionMismatch("z_bar", n, z_bar.size());
  const Eigen::MatrixXd& lambda = precomp.lambda();
  const Eigen::VectorXd& s2 = precomp.sigma_star2();
  const Dataset& data = precomp.data();

  double diag_sum = 0.0;
  double cross = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = 2.0 * data.y[i] - 1.0;
    const double sig = std::sqrt(s2[i]);
    const double t = s * mu[i] / sig;
    const double ez2 = mu[i] * mu[i] + s2[i] + s * mu[i] * sig * mills_ratio(t);
    diag_sum += lambda(i, i) * ez2 - 2.0 * log_norm_cdf(t) - ez2 / s2[i] +
                2.0 * z_bar[i] * mu[i] / s2[i] - t * t;
    for (Eigen::Index j = 0; j < i; ++j) cross += lambda(i, j) * z_bar[i] * z_bar[j];
  }
  return -0.5 * diag_sum - cross;
}

/// Full ELBO of a partially-factorized state, every constant included, so it
/// is comparable with mf_joint_elbo.
inline double pfm_joint_elbo(const KernelPrecomp& precomp, const Eigen::Ref<const Eigen::VectorXd>& mu,
                             const Eigen::Ref<const Eigen::VectorXd>& z_bar) {
  return pfm_elbo(precomp, mu, z_bar) + 0.5 * precomp.sigma_star2().array().log().sum() -
         0.5 * precomp.log_det_marginal();
}

inline double pfm_joint_elbo(const PfmPosterior& post) {
  return pfm_joint_elbo(*post.precomp, post.mu_star, post.z_bar_star);
}

/// max_i |mu_i - sigma_i^2 x_i' V X_{-i}' z_{-i}| with z_k the truncated-normal
/// mean implied by mu_k.
inline double pfm_fixed_point_residual(const KernelPrecomp& precomp,
                                       const Eigen::Ref<const Eigen::VectorXd>& mu) {
  const Eigen::Index n = precomp.n();
  if (mu.size() != n) throw DimensionMismatch("mu", n, mu.size());
  const Dataset& data = precomp.data();
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    z[i] = tn_mean({mu[i], std::sqrt(precomp.sigma_star2()[i]), side_from_label(data.y[i])});
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double off = precomp.h().row(i).dot(z) - precomp.h()(i, i) * z[i];
    worst = std::max(worst, std::abs(mu[i] - precomp.sigma_star2()[i] * off));
  }
  return worst;
}

/// Coordinate ascent over the latent factors, units swept in ascending order.
inline PfmPosterior fit_pfm(std::shared_ptr<const KernelPrecomp> precomp, const PfmOptions& opts = {}) {
  if (!precomp) throw InvalidArgument("fit_pfm: null precomputation");
  const Dataset& data = precomp->data();
  const Eigen::Index n = data.n();
  const Eigen::MatrixXd& x = data.x;
  const Eigen::MatrixXd& h = precomp->h();
  const Eigen::MatrixXd& vxt = precomp->vxt();
  const Eigen::VectorXd& s2 = precomp->sigma_star2();
  const Eigen::VectorXd s = data.signs();

  PfmPosterior post;
  post.rule_used = opts.rule != SweepRule::Auto
                       ? opts.rule
                       : (data.p() > n ? SweepRule::HRow : SweepRule::AlphaRecursion);
  post.sigma_star = s2.cwiseSqrt();
  post.mu_star = Eigen::VectorXd::Zero(n);
  post.z_bar_star = opts.z_init.value_or(Eigen::VectorXd::Zero(n));
  if (post.z_bar_star.size() != n) throw DimensionMismatch("z_init", n, post.z_bar_star.size());

  Eigen::VectorXd& mu = post.mu_star;
  Eigen::VectorXd& z = post.z_bar_star;
  const auto update_z = [&](Eigen::Index i) {
    z[i] = tn_mean({mu[i], post.sigma_star[i], side_from_label(data.y[i])});
  };

  Eigen::VectorXd alpha;
  Eigen::VectorXd mu_prev;
  for (int t = 1; t <= opts.max_iter; ++t) {
    if (opts.mu_tolerance) mu_prev = mu;
    if (post.rule_used == SweepRule::HRow) {
      for (Eigen::Index i = 0; i < n; ++i) {
        mu[i] = s2[i] * (h.row(i).dot(z) - h(i, i) * z[i]);
        update_z(i);
      }
    } else {
      // alpha^(i) = sum_{k < i} x_k z_k^(t) + sum_{k > i} x_k z_k^(t-1)
      alpha.noalias() = x.transpose() * z;
      alpha -= x.row(0).transpose() * z[0];
      for (Eigen::Index i = 0; i < n; ++i) {
        if (i > 0) {
          alpha -= x.row(i).transpose() * z[i];
          alpha += x.row(i - 1).transpose() * z[i - 1];
        }
        mu[i] = s2[i] * vxt.col(i).dot(alpha);
        update_z(i);
      }
    }
    if (opts.record_history) {
      post.mu_history.push_back(mu);
      post.z_history.push_back(z);
    }
    const double elbo = pfm_elbo(*precomp, mu, z);
    post.elbo_trace.push_back(elbo);
    post.sweeps = t;
    const bool mu_settled = !opts.mu_tolerance || (mu - mu_prev).lpNorm<Eigen::Infinity>() < *opts.mu_tolerance;
    if (t >= 2 && mu_settled && std::abs(elbo - post.elbo_trace[t - 2]) < opts.tolerance) {
      post.iterations = t - 1;
      post.converged = true;
      break;
    }
    post.iterations = t;
  }
  post.precomp = std::move(precomp);
  return post;
}

/// Unified skew-normal parameters of q(beta). Gamma is the n x n identity and
/// is never stored; Omega is materialized only when p <= cap.
struct SunParams {
  std::shared_ptr<const KernelPrecomp> precomp;
  Eigen::VectorXd xi;
  std::optional<Eigen::MatrixXd> omega;
  Eigen::VectorXd omega_diag;  // sqrt(diag Omega)
  Eigen::MatrixXd delta;       // p x n
  Eigen::VectorXd gamma;
  Eigen::VectorXd y_sign;
  Eigen::VectorXd sigma_star2;

  Eigen::Index latent_dim() const noexcept { return gamma.size(); }
  static constexpr bool gamma_is_identity() noexcept { return true; }
  Eigen::MatrixXd gamma_matrix() const { return Eigen::MatrixXd::Identity(latent_dim(), latent_dim()); }

  /// Omega b = V b + VX' sigma^2 X V b.
  Eigen::VectorXd apply_omega(const Eigen::Ref<const Eigen::VectorXd>& b) const {
    const Eigen::VectorXd w = (precomp->vxt().transpose() * b).cwiseProduct(sigma_star2);
    return precomp->apply_v(b) + precomp->vxt() * w;
  }
};

inline constexpr Eigen::Index kDefaultMaterializeCap = 2000;

inline SunParams sun_params(const PfmPosterior& post, Eigen::Index cap = kDefaultMaterializeCap) {
  const KernelPrecomp& pc = *post.precomp;
  const Eigen::MatrixXd& vxt = pc.vxt();
  SunParams sun;
  sun.precomp = post.precomp;
  sun.sigma_star2 = pc.sigma_star2();
  sun.y_sign = pc.data().signs();
  sun.xi = vxt * post.mu_star;
  sun.omega_diag =
      (pc.v_diag() + vxt.cwiseAbs2() * sun.sigma_star2).cwiseSqrt();
  sun.delta = vxt * (sun.y_sign.cwiseProduct(post.sigma_star)).asDiagonal();
  sun.delta = sun.omega_diag.cwiseInverse().asDiagonal() * sun.delta;
  sun.gamma = sun.y_sign.cwiseProduct(post.mu_star).cwiseQuotient(post.sigma_star);
  if (pc.p() <= cap) {
    Eigen::MatrixXd omega = pc.v_dense();
    omega.noalias() += vxt * sun.sigma_star2.asDiagonal() * vxt.transpose();
    sun.omega = 0.5 * (omega + omega.transpose());
  }
  return sun;
}

struct PfmMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd marginal_vars;
  std::optional<Eigen::MatrixXd> full_cov;
};

/// E(beta) = VX' zbar and var(beta) = V + VX' diag(var z_i) X V. Marginal
/// variances use V_jj from the precomputation, so no p x p work is done unless
/// the full covariance is requested (p <= cap).
inline PfmMoments pfm_moments(const PfmPosterior& post, Eigen::Index cap = kDefaultMaterializeCap) {
  const KernelPrecomp& pc = *post.precomp;
  const Eigen::MatrixXd& vxt = pc.vxt();
  Eigen::VectorXd zvar(pc.n());
  for (Eigen::Index i = 0; i < pc.n(); ++i) zvar[i] = tn_var(post.latent(i));

  PfmMoments m;
  m.mean = vxt * post.z_bar_star;
  m.marginal_vars = pc.v_diag() + vxt.cwiseAbs2() * zvar;
  if (pc.p() <= cap) {
    Eigen::MatrixXd cov = pc.v_dense();
    cov.noalias() += vxt * zvar.asDiagonal() * vxt.transpose();
    m.full_cov = 0.5 * (cov + cov.transpose());
  }
  return m;
}

/// i.i.d. draws from q(beta), one per row, as u0 + VX' Y sigma u1 with
/// u0 ~ N(VX' mu, V) and u1_i ~ TN(0, 1, [-s_i mu_i / sigma_i, inf)).
/// With marginals_only, u0_j is drawn from its own N(xi_j, V_jj) marginal, so
/// each column has the exact marginal law while cross-coordinate dependence
/// through u0 is dropped.
inline Eigen::MatrixXd pfm_sample(const PfmPosterior& post, Eigen::Index n_draws, Rng& rng,
                                  bool marginals_only = false) {
  const KernelPrecomp& pc = *post.precomp;
  const Eigen::Index n = pc.n();
  const Eigen::Index p = pc.p();
  const Eigen::VectorXd xi = pc.vxt() * post.mu_star;
  const Eigen::VectorXd s = pc.data().signs();
  const Eigen::VectorXd v_sd = pc.v_diag().cwiseSqrt();
  Eigen::VectorXd lower(n);
  Eigen::VectorXd scale(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lower[i] = -s[i] * post.mu_star[i] / post.sigma_star[i];
    scale[i] = s[i] * post.sigma_star[i];
  }

  Eigen::MatrixXd draws(n_draws, p);
  Eigen::VectorXd u0(p);
  Eigen::VectorXd u1(n);
  for (Eigen::Index r = 0; r < n_draws; ++r) {
    if (marginals_only) {
      for (Eigen::Index j = 0; j < p; ++j) u0[j] = v_sd[j] * rng.normal();
    } else {
      pc.sample_gaussian(rng, u0);
    }
    for (Eigen::Index i = 0; i < n; ++i) u1[i] = scale[i] * std_tn_lower_sample(lower[i], rng);
    u0 += xi;
    u0.noalias() += pc.vxt() * u1;
    draws.row(r) = u0.transpose();
  }
  return draws;
}

struct PredictiveEstimate {
  double probability = 0.5;
  double std_error = 0.0;
};

/// Monte Carlo estimate of E_q(z) Phi(x' VX' z / sqrt(1 + x' V x)) over R
/// independent draws of the latent vector.
inline PredictiveEstimate pfm_predict(const PfmPosterior& post,
                                      const Eigen::Ref<const Eigen::VectorXd>& x_new,
                                      Eigen::Index draws, Rng& rng) {
  const KernelPrecomp& pc = *post.precomp;
  if (x_new.size() != pc.p()) throw DimensionMismatch("x_new", pc.p(), x_new.size());
  if (draws < 1) throw InvalidArgument("pfm_predict needs at least one draw");
  const Eigen::Index n = pc.n();
  const double inv_scale = 1.0 / std::sqrt(1.0 + pc.quad_form(x_new));
  const Eigen::VectorXd a = (pc.vxt().transpose() * x_new) * inv_scale;
  std::vector<TruncNormParams> latent(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) latent[static_cast<std::size_t>(i)] = post.latent(i);

  // Welford running mean / variance
  double mean = 0.0;
  double m2 = 0.0;
  for (Eigen::Index r = 0; r < draws; ++r) {
    double lin = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) lin += a[i] * tn_sample(latent[static_cast<std::size_t>(i)], rng);
    const double val = norm_cdf(lin);
    const double delta = val - mean;
    mean += delta / static_cast<double>(r + 1);
    m2 += delta * (val - mean);
  }
  PredictiveEstimate est;
  est.probability = mean;
  est.std_error = draws > 1 ? std::sqrt(m2 / static_cast<double>(draws - 1) / static_cast<double>(draws)) : 0.0;
  return est;
}

/// Row r of x_new uses stream r split from seed, so each row's estimate does
/// not depend on which other rows are scored with it.
inline std::vector<PredictiveEstimate> pfm_predict_rows(const PfmPosterior& post,
                                                        const Eigen::MatrixXd& x_new,
                                                        Eigen::Index draws, std::uint64_t seed) {
  const Rng root(seed);
  std::vector<PredictiveEstimate> out;
  out.reserve(static_cast<std::size_t>(x_new.rows()));
  for (Eigen::Index r = 0; r < x_new.rows(); ++r) {
    Rng stream = root.split(static_cast<std::uint64_t>(r));
    out.push_back(pfm_predict(post, x_new.row(r).transpose(), draws, stream));
  }
  return out;
}

}  // namespace pfvb
