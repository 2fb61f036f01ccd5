#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "pfvb/diagnostics.hpp"

using pfvb::Method;
using pfvb::PriorSpec;
using pfvb::Scenario;

namespace {

// Integral of |F_a - F_b| over the merged support.
double w1_by_cdf(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> pts(a);
  pts.insert(pts.end(), b.begin(), b.end());
  std::sort(pts.begin(), pts.end());
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), pts[k]) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), pts[k]) - b.begin()) / b.size();
    acc += std::abs(fa - fb) * (pts[k + 1] - pts[k]);
  }
  return acc;
}

// Midpoint rule on |Qa - Qb| with type-7 quantiles.
double w1_by_quantile_grid(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto q = [](const std::vector<double>& s, double u) {
    const double h = u * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    return lo + 1 < s.size() ? s[lo] + (h - lo) * (s[lo + 1] - s[lo]) : s.back();
  };
  const int steps = 4000000;
  double acc = 0.0;
  for (int t = 0; t < steps; ++t) {
    const double u = (t + 0.5) / steps;
    acc += std::abs(q(a, u) - q(b, u));
  }
  return acc / steps;
}

std::vector<double> normals(std::size_t m, std::uint64_t seed, double shift = 0.0) {
  pfvb::Rng rng(seed);
  std::vector<double> v(m);
  for (auto& e : v) e = shift + rng.normal();
  return v;
}

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd ca = a.array() - a.mean();
  const Eigen::ArrayXd cb = b.array() - b.mean();
  return (ca * cb).sum() / std::sqrt(ca.square().sum() * cb.square().sum());
}

}  // namespace

TEST(Wasserstein, Examples) {
  const auto a = normals(100, 1);
  EXPECT_EQ(pfvb::wasserstein_1d(a, a), 0.0);
  std::vector<double> b(a);
  for (auto& e : b) e += 0.75;
  EXPECT_NEAR(pfvb::wasserstein_1d(a, b), 0.75, 1e-12);
  EXPECT_DOUBLE_EQ(pfvb::wasserstein_1d(std::vector<double>{0, 1}, std::vector<double>{0, 2}), 0.5);
  EXPECT_THROW(pfvb::wasserstein_1d(std::vector<double>{}, std::vector<double>{1}), pfvb::InvalidArgument);
}

TEST(Wasserstein, UnequalSizesIntegrateInterpolatedQuantiles) {
  EXPECT_DOUBLE_EQ(pfvb::wasserstein_1d(std::vector<double>{0}, std::vector<double>{0, 1}), 0.5);
  EXPECT_NEAR(pfvb::wasserstein_1d(std::vector<double>{0, 1}, std::vector<double>{0.5, 0.5, 0.5}), 0.25, 1e-15);
  for (auto [m, k] : {std::pair{7, 3}, std::pair{100, 37}, std::pair{250, 1000}}) {
    const auto a = normals(m, m + k);
    const auto b = normals(k, 3 * m + k, 0.3);
    EXPECT_NEAR(pfvb::wasserstein_1d(a, b), w1_by_quantile_grid(a, b), 1e-6);
    EXPECT_NEAR(pfvb::wasserstein_1d(a, b), w1_by_cdf(a, b), 0.1);
  }
}

TEST(Wasserstein, MetricProperties) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = normals(200, 3 * s), b = normals(200, 3 * s + 1, 0.5), c = normals(200, 3 * s + 2, -0.2);
    const double ab = pfvb::wasserstein_1d(a, b);
    EXPECT_NEAR(ab, pfvb::wasserstein_1d(b, a), 1e-15);
    EXPECT_LE(pfvb::wasserstein_1d(a, c), ab + pfvb::wasserstein_1d(b, c) + 1e-12);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(Deviance, Examples) {
  const Eigen::VectorXd y = (Eigen::VectorXd(4) << 1, 0, 1, 1).finished();
  EXPECT_LE(pfvb::test_deviance(y, y), 33.0 * 1e-12 * 4);
  EXPECT_NEAR(pfvb::test_deviance(y, Eigen::VectorXd::Constant(4, 0.5)), 4.0 * std::log(2.0), 1e-14);
  EXPECT_NEAR(pfvb::test_deviance(Eigen::Vector2d(1, 0), Eigen::Vector2d(0.8, 0.3)), 0.57982, 1e-5);
  EXPECT_NEAR(pfvb::test_deviance(Eigen::Vector2d(1, 0), Eigen::Vector2d(0.8, 0.3)),
              -std::log(0.8) - std::log(0.7), 1e-15);
  EXPECT_THROW(pfvb::test_deviance(y, Eigen::VectorXd::Constant(3, 0.5)), pfvb::DimensionMismatch);
}

TEST(Simulate, ShapesAndStandardization) {
  for (Scenario sc : {Scenario::Independent, Scenario::ColumnCorr, Scenario::RowCorrDecay}) {
    const auto sim = pfvb::simulate_dataset(40, 12, 9, sc);
    EXPECT_EQ(sim.data.n(), 40);
    EXPECT_EQ(sim.data.p(), 12);
    EXPECT_TRUE((sim.data.x.col(0).array() == 1.0).all());
    for (Eigen::Index j = 1; j < 12; ++j) {
      const auto [mean, sd] = pfvb::column_mean_sd(sim.data.x.col(j));
      EXPECT_LT(std::abs(mean), 1e-10);
      EXPECT_NEAR(sd, 0.5, 1e-10);
    }
    EXPECT_NO_THROW(sim.data.validate());
    EXPECT_TRUE((sim.true_beta.array().abs() <= 5.0).all());
    EXPECT_TRUE(((sim.data.y.array() == 0.0) || (sim.data.y.array() == 1.0)).all());
  }
}

TEST(Simulate, Deterministic) {
  const auto a = pfvb::simulate_dataset(30, 8, 4, Scenario::ColumnCorr);
  const auto b = pfvb::simulate_dataset(30, 8, 4, Scenario::ColumnCorr);
  EXPECT_EQ(a.data.x, b.data.x);
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_EQ(a.true_beta, b.true_beta);
  EXPECT_NE(a.data.x, pfvb::simulate_dataset(30, 8, 5, Scenario::ColumnCorr).data.x);
}

TEST(Simulate, NestedInDimension) {
  const auto small = pfvb::simulate_study(20, 10, 5, 3);
  const auto large = pfvb::simulate_study(20, 10, 50, 3);
  EXPECT_EQ(small.train.x, large.train.x.leftCols(5));
  EXPECT_EQ(small.x_new, large.x_new.leftCols(5));
  EXPECT_EQ(small.true_beta, large.true_beta.head(5));
}

TEST(Simulate, HoldoutUsesTrainingTransform) {
  const auto study = pfvb::simulate_study(50, 100, 6, 8);
  EXPECT_EQ(study.x_new.rows(), 100);
  EXPECT_EQ(study.y_new.size(), 100);
  EXPECT_TRUE((study.x_new.col(0).array() == 1.0).all());
  const auto& st = *study.train.standardization;
  ASSERT_EQ(st.columns.size(), 5u);
  EXPECT_NEAR(st.columns[0].scale, 2.0 * pfvb::column_mean_sd(
                                             (study.train.x.col(1).array() * st.columns[0].scale +
                                              st.columns[0].mean).matrix()).second,
              1e-9);
}

TEST(Simulate, CorrelationStructure) {
  const auto col = pfvb::simulate_dataset(20000, 3, 1, Scenario::ColumnCorr);
  EXPECT_NEAR(corr(col.data.x.col(1), col.data.x.col(2)), 0.5, 0.03);
  const auto ind = pfvb::simulate_dataset(20000, 3, 1, Scenario::Independent);
  EXPECT_NEAR(corr(ind.data.x.col(1), ind.data.x.col(2)), 0.0, 0.03);
  const auto row = pfvb::simulate_dataset(100, 5001, 1, Scenario::RowCorrDecay);
  const Eigen::MatrixXd body = row.data.x.rightCols(5000);
  EXPECT_NEAR(corr(body.row(50).transpose(), body.row(51).transpose()), 0.5, 0.05);
  EXPECT_NEAR(corr(body.row(50).transpose(), body.row(52).transpose()), 0.25, 0.05);
}

TEST(Simulate, RejectsBadDims) {
  EXPECT_THROW(pfvb::simulate_dataset(1, 3, 1), pfvb::InvalidArgument);
  EXPECT_THROW(pfvb::simulate_dataset(10, 0, 1), pfvb::InvalidArgument);
  EXPECT_THROW(pfvb::scenario_from_string("block"), pfvb::InvalidArgument);
}

TEST(Compare, IdenticalMethodsHaveZeroDifferences) {
  const auto sim = pfvb::simulate_dataset(40, 15, 2);
  pfvb::CompareOptions opts;
  opts.draws = 2000;
  opts.predictive_draws = 500;
  const auto rep = pfvb::compare_methods(sim.data, PriorSpec{25.0}, {Method::PFM, Method::PFM}, 0.25, 7, opts);
  ASSERT_EQ(rep.methods.size(), 2u);
  const auto& m = rep.methods[1];
  EXPECT_EQ(m.mean_abs_diff->q75, 0.0);
  EXPECT_EQ(m.sd_abs_diff->q75, 0.0);
  EXPECT_EQ(m.pred_abs_diff->q75, 0.0);
  EXPECT_EQ(m.wasserstein->q75, 0.0);
  EXPECT_EQ(rep.n_holdout, 10);
  EXPECT_EQ(rep.n_train, 30);
}

TEST(Compare, PfmTracksGibbsCloserThanMf) {
  const auto study = pfvb::simulate_study(50, 100, 200, 31);
  pfvb::CompareOptions opts;
  opts.draws = 5000;
  opts.predictive_draws = 2000;
  opts.noise_floor_pairs = 3;
  const auto rep = pfvb::compare_methods(study.train, study.x_new, study.y_new, PriorSpec{25.0},
                                         {Method::MF, Method::PFM, Method::Gibbs}, 11, opts);
  EXPECT_EQ(rep.reference, "gibbs");
  const auto& mf = rep.methods[0];
  const auto& pfm = rep.methods[1];
  ASSERT_TRUE(mf.iterations && pfm.iterations);
  EXPECT_GT(*mf.iterations, 0);
  EXPECT_GT(*pfm.iterations, 0);
  EXPECT_LT(pfm.mean_abs_diff->q25, mf.mean_abs_diff->q25);
  EXPECT_LT(pfm.mean_abs_diff->q50, mf.mean_abs_diff->q50);
  EXPECT_LT(pfm.mean_abs_diff->q75, mf.mean_abs_diff->q75);
  ASSERT_TRUE(rep.noise_floor.has_value());
  EXPECT_LT(rep.noise_floor->log_w_q025, rep.noise_floor->log_w_q975);
  EXPECT_EQ(rep.noise_floor->pairs, 3);
  EXPECT_TRUE(pfm.test_deviance.has_value());
}

TEST(Compare, NoiseFloorShrinksWithDraws) {
  const auto sim = pfvb::simulate_dataset(20, 8, 2);
  const auto precomp = pfvb::build_precomp(sim.data, PriorSpec{});
  pfvb::oracle::GibbsOptions g;
  g.burn_in = 500;
  const auto small = pfvb::gibbs_noise_floor(*precomp, g, 500, 10, 4);
  const auto large = pfvb::gibbs_noise_floor(*precomp, g, 8000, 10, 4);
  EXPECT_EQ(small.per_coord.size(), 8);
  EXPECT_TRUE((small.per_coord.array() > 0.0).all());
  // W1 between independent samples decays like draws^(-1/2).
  const double ratio = small.per_coord.mean() / large.per_coord.mean();
  EXPECT_GT(ratio, 2.5);
  EXPECT_LT(ratio, 6.0);
  const auto again = pfvb::gibbs_noise_floor(*precomp, g, 500, 10, 4);
  EXPECT_EQ(small.per_coord, again.per_coord);
  EXPECT_THROW(pfvb::gibbs_noise_floor(*precomp, g, 500, 0, 4), pfvb::InvalidArgument);
}

TEST(Compare, DeterministicGivenSeed) {
  const auto sim = pfvb::simulate_dataset(30, 12, 6);
  pfvb::CompareOptions opts;
  opts.draws = 1000;
  opts.predictive_draws = 300;
  opts.gibbs.burn_in = 200;
  const std::vector<Method> methods{Method::MF, Method::PFM, Method::Gibbs};
  auto a = pfvb::report_to_json(pfvb::compare_methods(sim.data, PriorSpec{}, methods, 0.2, 3, opts));
  auto b = pfvb::report_to_json(pfvb::compare_methods(sim.data, PriorSpec{}, methods, 0.2, 3, opts));
  for (auto* j : {&a, &b}) {
    for (auto& m : (*j)["methods"]) m.erase("fit_seconds");
  }
  EXPECT_EQ(a, b);
  for (const char* key : {"reference", "noise_floor", "methods", "schema_version", "n_train", "n_holdout"}) {
    EXPECT_TRUE(a.contains(key)) << key;
  }
  for (const char* key : {"mean_abs_diff", "sd_abs_diff", "pred_abs_diff", "wasserstein", "test_deviance",
                          "iterations"}) {
    EXPECT_FALSE(a["methods"][0][key].is_null()) << key;
  }
}

TEST(Compare, TidyCsv) {
  const auto sim = pfvb::simulate_dataset(30, 5, 6);
  pfvb::CompareOptions opts;
  opts.draws = 500;
  opts.predictive_draws = 100;
  const auto rep = pfvb::compare_methods(sim.data, PriorSpec{}, {Method::MF, Method::PFM}, 0.2, 3, opts);
  const std::string csv = pfvb::report_to_csv(rep);
  EXPECT_EQ(csv.rfind("metric,method,quantile,value\n", 0), 0u);
  EXPECT_NE(csv.find("mean_abs_diff,pfm,0.5,"), std::string::npos);
  EXPECT_NE(csv.find("iterations,mf,,"), std::string::npos);
}

TEST(Compare, Errors) {
  const auto sim = pfvb::simulate_dataset(30, 5, 6);
  EXPECT_THROW(pfvb::compare_methods(sim.data, PriorSpec{}, {Method::MF}, 0.2, 3), pfvb::InvalidArgument);
  EXPECT_THROW(pfvb::compare_methods(sim.data, PriorSpec{}, {Method::MF, Method::PFM}, 1.0, 3),
               pfvb::InvalidArgument);
  EXPECT_THROW(pfvb::method_from_string("ep"), pfvb::InvalidArgument);
}
