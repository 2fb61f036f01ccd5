#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pfvb/error.hpp"

namespace pfvb {

/// Affine map x -> (x - mean) / scale applied to one raw predictor.
struct ColumnTransform {
  double mean = 0.0;
  double scale = 1.0;

  double apply(double x) const noexcept { return (x - mean) / scale; }
  bool operator==(const ColumnTransform&) const = default;
};

/// Per-column standardization record. When has_intercept is set, column 0 of
/// the design is the all-ones intercept and columns[k] describes column k + 1.
struct Standardization {
  bool has_intercept = true;
  std::vector<ColumnTransform> columns;

  bool operator==(const Standardization&) const = default;
};

/// Target standard deviation of standardized predictors.
inline constexpr double kStandardizedSd = 0.5;

/// Sample mean and (n - 1)-denominator standard deviation of a column.
inline std::pair<double, double> column_mean_sd(const Eigen::Ref<const Eigen::VectorXd>& col) {
  const double mean = col.mean();
  const double ss = (col.array() - mean).square().sum();
  const double sd = col.size() > 1 ? std::sqrt(ss / static_cast<double>(col.size() - 1)) : 0.0;
  return {mean, sd};
}

/// Binary-response design: y in {0,1}^n and an n x p design matrix.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  std::optional<Standardization> standardization;
  std::vector<std::string> column_names;

  Eigen::Index n() const noexcept { return x.rows(); }
  Eigen::Index p() const noexcept { return x.cols(); }

  /// 2y - 1 as a +-1 vector.
  Eigen::VectorXd signs() const { return (2.0 * y.array() - 1.0).matrix(); }

  /// Throws on any broken invariant.
  void validate() const {
    if (x.rows() < 1 || x.cols() < 1) throw InvalidArgument("dataset needs n >= 1 and p >= 1");
    if (y.size() != x.rows()) throw DimensionMismatch("response vector", x.rows(), y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0 && y[i] != 1.0) {
        throw NonBinaryResponse("response entry " + std::to_string(i) + " is not 0 or 1");
      }
    }
    if (!x.allFinite()) throw InvalidArgument("design matrix has non-finite entries");
    if (!column_names.empty() && static_cast<Eigen::Index>(column_names.size()) != p()) {
      throw DimensionMismatch("column names", p(), static_cast<long>(column_names.size()));
    }
    if (standardization) {
      const Eigen::Index first = standardization->has_intercept ? 1 : 0;
      for (Eigen::Index j = first; j < p(); ++j) {
        const auto [mean, sd] = column_mean_sd(x.col(j));
        if (std::abs(mean) > 1e-10 || std::abs(sd - kStandardizedSd) > 1e-10) {
          throw InvalidArgument("column " + std::to_string(j) + " is not standardized");
        }
      }
      if (standardization->has_intercept && !(x.col(0).array() == 1.0).all()) {
        throw InvalidArgument("intercept column is not all ones");
      }
    }
  }
};

enum class PriorScaling { Constant, InverseP };

/// Gaussian prior N(0, nu_p^2 I) with nu_p^2 = nu^2 or nu^2 / p.
struct PriorSpec {
  double base_variance = 25.0;
  PriorScaling scaling = PriorScaling::Constant;

  static PriorSpec from_sd(double sd, PriorScaling scaling = PriorScaling::Constant) {
    return PriorSpec{sd * sd, scaling};
  }

  double resolved(Eigen::Index p) const {
    if (!(base_variance > 0.0) || !std::isfinite(base_variance)) {
      throw InvalidArgument("prior variance must be positive and finite");
    }
    if (p < 1) throw InvalidArgument("prior needs p >= 1");
    return scaling == PriorScaling::Constant ? base_variance
                                             : base_variance / static_cast<double>(p);
  }

  bool operator==(const PriorSpec&) const = default;
};

}  // namespace pfvb
