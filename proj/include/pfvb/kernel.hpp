#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <utility>

#include <Eigen/Dense>

#include "pfvb/data.hpp"
#include "pfvb/error.hpp"
#include "pfvb/rng.hpp"

namespace pfvb {

/// Which factorization produced the kernel products.
enum class KernelPath {
  DirectP,    // p x p Cholesky of nu^-2 I + X'X, V formed explicitly
  WoodburyN,  // n x n Cholesky of I + nu^2 XX', V never formed
};

enum class PathChoice { Auto, DirectP, WoodburyN };

/// Design-dependent products shared by every fitter:
///   vxt = V X'   (p x n),   h = X V X'   (n x n),   lambda = I - h,
///   sigma_star2_i = 1 / (1 - h_ii),   v_diag_j = V_jj,
/// with V = (nu_p^-2 I + X'X)^-1. Immutable once built.
class KernelPrecomp {
 public:
  const Dataset& data() const noexcept { return *data_; }
  const std::shared_ptr<const Dataset>& data_ptr() const noexcept { return data_; }
  Eigen::Index n() const noexcept { return data_->n(); }
  Eigen::Index p() const noexcept { return data_->p(); }
  double prior_variance() const noexcept { return nu2_; }
  KernelPath path() const noexcept { return path_; }

  const Eigen::MatrixXd& vxt() const noexcept { return vxt_; }
  const Eigen::MatrixXd& h() const noexcept { return h_; }
  const Eigen::MatrixXd& lambda() const noexcept { return lambda_; }
  const Eigen::VectorXd& sigma_star2() const noexcept { return sigma_star2_; }
  const Eigen::VectorXd& v_diag() const noexcept { return v_diag_; }

  /// log det(I_n + nu_p^2 X X').
  double log_det_marginal() const noexcept { return log_det_marginal_; }

  /// True when a p x p matrix is held (DirectP only).
  bool holds_p_by_p() const noexcept { return v_.size() > 0; }

  /// Bytes held in matrix/vector members, excluding the shared dataset.
  std::size_t stored_bytes() const noexcept {
    const auto sz = [](const auto& m) { return static_cast<std::size_t>(m.size()) * sizeof(double); };
    return sz(vxt_) + sz(h_) + sz(lambda_) + sz(sigma_star2_) + sz(v_diag_) + sz(v_) +
           sz(precision_llt_.matrixLLT());
  }

  /// V b without forming V on the Woodbury path.
  Eigen::VectorXd apply_v(const Eigen::Ref<const Eigen::VectorXd>& b) const {
    if (b.size() != p()) throw DimensionMismatch("apply_v", p(), b.size());
    if (path_ == KernelPath::DirectP) return v_ * b;
    const Eigen::VectorXd xb = data_->x * b;
    return nu2_ * (b - vxt_ * xb);
  }

  /// x' V x, clamped to its exact range [0, nu_p^2 |x|^2].
  double quad_form(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != p()) throw DimensionMismatch("x_new", p(), x.size());
    const double upper = nu2_ * x.squaredNorm();
    double q;
    if (path_ == KernelPath::DirectP) {
      q = precision_llt_.matrixL().solve(x).squaredNorm();
    } else {
      const Eigen::VectorXd xx = data_->x * x;
      q = nu2_ * (x.squaredNorm() - nu2_ * xx.dot(lambda_ * xx));
    }
    return std::clamp(q, 0.0, upper);
  }

  /// Dense V. Costs O(p^2 n) and p^2 memory on the Woodbury path.
  Eigen::MatrixXd v_dense() const {
    if (path_ == KernelPath::DirectP) return v_;
    Eigen::MatrixXd v = -nu2_ * (vxt_ * data_->x);
    v.diagonal().array() += nu2_;
    return 0.5 * (v + v.transpose());
  }

  /// One draw from N(0, V). The Woodbury path uses
  ///   u ~ N(0, nu^2 I_p), d ~ N(0, I_n),  u - V X'(X u + d),
  /// which has covariance V at O(pn) per draw.
  void sample_gaussian(Rng& rng, Eigen::Ref<Eigen::VectorXd> out) const {
    if (out.size() != p()) throw DimensionMismatch("gaussian draw", p(), out.size());
    if (path_ == KernelPath::DirectP) {
      Eigen::VectorXd eps(p());
      for (Eigen::Index j = 0; j < p(); ++j) eps[j] = rng.normal();
      out = precision_llt_.matrixU().solve(eps);
      return;
    }
    const double nu = std::sqrt(nu2_);
    for (Eigen::Index j = 0; j < p(); ++j) out[j] = nu * rng.normal();
    Eigen::VectorXd w = data_->x * out;
    for (Eigen::Index i = 0; i < n(); ++i) w[i] += rng.normal();
    out.noalias() -= vxt_ * w;
  }

 private:
  friend std::shared_ptr<const KernelPrecomp> build_precomp(std::shared_ptr<const Dataset>,
                                                            const PriorSpec&, PathChoice);
  KernelPrecomp() = default;

  std::shared_ptr<const Dataset> data_;
  double nu2_ = 0.0;
  KernelPath path_ = KernelPath::DirectP;
  Eigen::MatrixXd vxt_;
  Eigen::MatrixXd h_;
  Eigen::MatrixXd lambda_;
  Eigen::VectorXd sigma_star2_;
  Eigen::VectorXd v_diag_;
  double log_det_marginal_ = 0.0;
  Eigen::MatrixXd v_;                           // DirectP only
  Eigen::LLT<Eigen::MatrixXd> precision_llt_;  // DirectP only
};

/// Builds all products. Auto selects WoodburyN iff p > n.
inline std::shared_ptr<const KernelPrecomp> build_precomp(std::shared_ptr<const Dataset> data,
                                                          const PriorSpec& prior,
                                                          PathChoice choice = PathChoice::Auto) {
  if (!data) throw InvalidArgument("build_precomp: null dataset");
  data->validate();
  const Eigen::Index n = data->n();
  const Eigen::Index p = data->p();
  const Eigen::MatrixXd& x = data->x;

  std::shared_ptr<KernelPrecomp> out(new KernelPrecomp());
  out->nu2_ = prior.resolved(p);
  const double nu2 = out->nu2_;
  out->path_ = choice == PathChoice::Auto
                   ? (p > n ? KernelPath::WoodburyN : KernelPath::DirectP)
                   : (choice == PathChoice::WoodburyN ? KernelPath::WoodburyN : KernelPath::DirectP);

  if (out->path_ == KernelPath::DirectP) {
    Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(p, p);
    precision.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    precision.diagonal().array() += 1.0 / nu2;
    out->precision_llt_.compute(precision);
    if (out->precision_llt_.info() != Eigen::Success) {
      throw SingularSystem("Cholesky of the p x p precision failed");
    }
    Eigen::MatrixXd v = out->precision_llt_.solve(Eigen::MatrixXd::Identity(p, p));
    out->v_ = 0.5 * (v + v.transpose());
    out->vxt_ = out->precision_llt_.solve(x.transpose());
    out->v_diag_ = out->v_.diagonal();
    const auto& llt = out->precision_llt_.matrixLLT();
    out->log_det_marginal_ = static_cast<double>(p) * std::log(nu2) +
                             2.0 * llt.diagonal().array().log().sum();
  } else {
    Eigen::MatrixXd marginal = Eigen::MatrixXd::Identity(n, n);
    marginal.selfadjointView<Eigen::Lower>().rankUpdate(x, nu2);
    Eigen::LLT<Eigen::MatrixXd> llt(marginal);
    if (llt.info() != Eigen::Success) {
      throw SingularSystem("Cholesky of the n x n marginal covariance failed");
    }
    out->vxt_ = nu2 * llt.solve(x).transpose();
    out->v_diag_ =
        nu2 * (1.0 - out->vxt_.cwiseProduct(x.transpose()).rowwise().sum().array()).matrix();
    out->log_det_marginal_ = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }

  Eigen::MatrixXd h = x * out->vxt_;
  out->h_ = 0.5 * (h + h.transpose());
  out->lambda_ = -out->h_;
  out->lambda_.diagonal().array() += 1.0;
  out->sigma_star2_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (out->h_(i, i) < 0.0 && out->h_(i, i) > -1e-14) {
      out->h_(i, i) = 0.0;
      out->lambda_(i, i) = 1.0;
    }
    const double hii = out->h_(i, i);
    if (!(hii < 1.0) || !(hii >= 0.0)) {
      throw SingularSystem("leverage h_ii outside [0, 1) at row " + std::to_string(i));
    }
    out->sigma_star2_[i] = 1.0 / (1.0 - hii);
  }
  out->data_ = std::move(data);
  return out;
}

inline std::shared_ptr<const KernelPrecomp> build_precomp(Dataset data, const PriorSpec& prior,
                                                          PathChoice choice = PathChoice::Auto) {
  return build_precomp(std::make_shared<const Dataset>(std::move(data)), prior, choice);
}

/// x_new' V x_new.
inline double quad_form_new(const KernelPrecomp& precomp,
                            const Eigen::Ref<const Eigen::VectorXd>& x_new) {
  return precomp.quad_form(x_new);
}

}  // namespace pfvb
