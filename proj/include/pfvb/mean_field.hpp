#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pfvb/error.hpp"
#include "pfvb/kernel.hpp"
#include "pfvb/truncnorm.hpp"

namespace pfvb {

struct MfOptions {
  int max_iter = 10000;
  double tolerance = 1e-6;  // absolute change in the log-posterior
  std::optional<Eigen::VectorXd> z_init;  // defaults to 0
};

/// Mean-field solution q(beta) = N(beta_bar, V), q(z_i) = TN(x_i' beta_bar, 1).
struct MfPosterior {
  std::shared_ptr<const KernelPrecomp> precomp;
  Eigen::VectorXd beta_bar;
  Eigen::VectorXd z_bar;
  std::vector<double> trace;  // log-posterior at each iterate
  int iterations = 0;
  bool converged = false;
};

/// Unnormalized log-posterior -|beta|^2 / (2 nu^2) + sum log Phi((2y_i - 1) x_i' beta).
inline double mf_log_posterior(const Dataset& data, double prior_variance,
                               const Eigen::Ref<const Eigen::VectorXd>& beta) {
  if (beta.size() != data.p()) throw DimensionMismatch("beta", data.p(), beta.size());
  const Eigen::VectorXd eta = data.x * beta;
  double ll = -beta.squaredNorm() / (2.0 * prior_variance);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    ll += log_norm_cdf((2.0 * data.y[i] - 1.0) * eta[i]);
  }
  return ll;
}

inline Eigen::VectorXd mf_log_posterior_gradient(const Dataset& data, double prior_variance,
                                                 const Eigen::Ref<const Eigen::VectorXd>& beta) {
  if (beta.size() != data.p()) throw DimensionMismatch("beta", data.p(), beta.size());
  const Eigen::VectorXd eta = data.x * beta;
  Eigen::VectorXd w(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double s = 2.0 * data.y[i] - 1.0;
    w[i] = s * mills_ratio(s * eta[i]);
  }
  return data.x.transpose() * w - beta / prior_variance;
}

/// Coordinate ascent for the mean-field family. Each iteration sets
/// beta = V X' z_bar and z_bar_i = x_i' beta + s_i zeta(s_i x_i' beta); this is
/// EM for the posterior mode, so the monitored log-posterior is nondecreasing
/// and equals the mean-field ELBO up to a constant.
///
/// `iterations` counts the updates taken before the change fell below the
/// tolerance. Hitting max_iter returns the last state with converged = false.
inline MfPosterior fit_mf(std::shared_ptr<const KernelPrecomp> precomp, const MfOptions& opts = {}) {
  if (!precomp) throw InvalidArgument("fit_mf: null precomputation");
  const Dataset& data = precomp->data();
  const Eigen::Index n = data.n();
  const double nu2 = precomp->prior_variance();
  const Eigen::VectorXd s = data.signs();

  MfPosterior post;
  post.z_bar = opts.z_init.value_or(Eigen::VectorXd::Zero(n));
  if (post.z_bar.size() != n) throw DimensionMismatch("z_init", n, post.z_bar.size());

  Eigen::VectorXd eta(n);
  for (int t = 1; t <= opts.max_iter; ++t) {
    post.beta_bar.noalias() = precomp->vxt() * post.z_bar;
    eta.noalias() = data.x * post.beta_bar;
    double ll = -post.beta_bar.squaredNorm() / (2.0 * nu2);
    for (Eigen::Index i = 0; i < n; ++i) {
      post.z_bar[i] = eta[i] + s[i] * mills_ratio(s[i] * eta[i]);
      ll += log_norm_cdf(s[i] * eta[i]);
    }
    post.trace.push_back(ll);
    if (t >= 2 && ll - post.trace[t - 2] < opts.tolerance) {
      post.iterations = t - 1;
      post.converged = true;
      break;
    }
    post.iterations = t;
  }
  post.precomp = std::move(precomp);
  return post;
}

/// Phi(x' beta_bar / sqrt(1 + x' V x)).
inline double mf_predict(const MfPosterior& post, const Eigen::Ref<const Eigen::VectorXd>& x_new) {
  const double q = post.precomp->quad_form(x_new);
  return norm_cdf(x_new.dot(post.beta_bar) / std::sqrt(1.0 + q));
}

inline Eigen::VectorXd mf_predict_rows(const MfPosterior& post, const Eigen::MatrixXd& x_new) {
  Eigen::VectorXd out(x_new.rows());
  for (Eigen::Index r = 0; r < x_new.rows(); ++r) out[r] = mf_predict(post, x_new.row(r).transpose());
  return out;
}

/// Full ELBO E log p(beta, z, y) - E log q(beta, z) of the mean-field solution,
/// including every constant. Reduces to l(beta_bar) - log det(I + nu^2 XX') / 2.
inline double mf_joint_elbo(const MfPosterior& post) {
  return mf_log_posterior(post.precomp->data(), post.precomp->prior_variance(), post.beta_bar) -
         0.5 * post.precomp->log_det_marginal();
}

/// Draws from q(beta) = N(beta_bar, V), one per row.
inline Eigen::MatrixXd mf_sample(const MfPosterior& post, Eigen::Index n_draws, Rng& rng) {
  const Eigen::Index p = post.beta_bar.size();
  Eigen::MatrixXd draws(n_draws, p);
  Eigen::VectorXd g(p);
  for (Eigen::Index r = 0; r < n_draws; ++r) {
    post.precomp->sample_gaussian(rng, g);
    draws.row(r) = (post.beta_bar + g).transpose();
  }
  return draws;
}

}  // namespace pfvb
