#pragma once

#include <cstdint>
#include <memory>

#include <Eigen/Dense>

#include "pfvb/data.hpp"
#include "pfvb/rng.hpp"

namespace fixtures {

/// Gaussian design with labels drawn from a probit model with N(0, 1) coefficients.
inline pfvb::Dataset random_dataset(Eigen::Index n, Eigen::Index p, std::uint64_t seed, double x_scale = 1.0) {
  pfvb::Rng rng(seed);
  pfvb::Dataset d;
  d.x.resize(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) d.x(i, j) = x_scale * rng.normal();
  }
  Eigen::VectorXd beta(p);
  for (Eigen::Index j = 0; j < p; ++j) beta[j] = rng.normal();
  const Eigen::VectorXd eta = d.x * beta;
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) d.y[i] = eta[i] + rng.normal() > 0.0 ? 1.0 : 0.0;
  return d;
}

inline std::shared_ptr<const pfvb::Dataset> shared(pfvb::Dataset d) {
  return std::make_shared<const pfvb::Dataset>(std::move(d));
}

inline pfvb::Dataset toy_1d(double x, double y) {
  pfvb::Dataset d;
  d.x = Eigen::MatrixXd::Constant(1, 1, x);
  d.y = Eigen::VectorXd::Constant(1, y);
  return d;
}

/// (nu^-2 I + X'X)^-1 by LU in long double.
inline Eigen::MatrixXd explicit_v(const Eigen::MatrixXd& x, double nu2) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const MatL xl = x.cast<long double>();
  MatL prec = xl.transpose() * xl;
  prec.diagonal().array() += 1.0L / nu2;
  return prec.fullPivLu().inverse().cast<double>();
}

}  // namespace fixtures
