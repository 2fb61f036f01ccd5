#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pfvb/data.hpp"
#include "pfvb/error.hpp"
#include "pfvb/kernel.hpp"
#include "pfvb/mean_field.hpp"
#include "pfvb/oracle.hpp"
#include "pfvb/partial_factorized.hpp"
#include "pfvb/rng.hpp"
#include "pfvb/truncnorm.hpp"

namespace pfvb {

/// W1 distance between two empirical distributions,
/// the integral over u in (0, 1) of |Q_a(u) - Q_b(u)| with step quantile functions.
/// Equal sizes reduce to the mean absolute difference of order statistics.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("wasserstein_1d needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t m = a.size();
  const std::size_t k = b.size();
  if (m == k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(m);
  }
  // Integral over u in [0,1] of |Qa(u) - Qb(u)|, each Q the type-7 interpolated quantile.
  const auto knots = [](std::size_t size) {
    std::vector<double> u(size);
    for (std::size_t i = 0; i < size; ++i) u[i] = size > 1 ? static_cast<double>(i) / static_cast<double>(size - 1) : 0.0;
    return u;
  };
  const auto at = [](const std::vector<double>& s, double u) {
    if (s.size() == 1) return s[0];
    const double h = u * static_cast<double>(s.size() - 1);
    const auto lo = std::min(static_cast<std::size_t>(h), s.size() - 2);
    return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
  };
  std::vector<double> grid = knots(m);
  const std::vector<double> kb = knots(k);
  grid.insert(grid.end(), kb.begin(), kb.end());
  grid.push_back(0.0);
  grid.push_back(1.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double acc = 0.0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double w = grid[g] - grid[g - 1];
    const double d0 = at(a, grid[g - 1]) - at(b, grid[g - 1]);
    const double d1 = at(a, grid[g]) - at(b, grid[g]);
    if ((d0 >= 0.0) == (d1 >= 0.0)) {
      acc += 0.5 * w * std::abs(d0 + d1);
    } else {
      acc += 0.5 * w * (d0 * d0 + d1 * d1) / (std::abs(d0) + std::abs(d1));
    }
  }
  return acc;
}

inline double wasserstein_1d(const Eigen::Ref<const Eigen::VectorXd>& a,
                             const Eigen::Ref<const Eigen::VectorXd>& b) {
  return wasserstein_1d(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

inline constexpr double kProbabilityClamp = 1e-12;

/// -sum { y log p + (1 - y) log(1 - p) }, probabilities clamped to [1e-12, 1 - 1e-12].
inline double test_deviance(const Eigen::Ref<const Eigen::VectorXd>& y,
                            const Eigen::Ref<const Eigen::VectorXd>& probs) {
  if (y.size() != probs.size()) throw DimensionMismatch("test_deviance probabilities", y.size(), probs.size());
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double q = std::clamp(probs[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    dev -= y[i] * std::log(q) + (1.0 - y[i]) * std::log1p(-q);
  }
  return dev;
}

/// Linear-interpolation (type 7) sample quantile.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw InvalidArgument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Quartiles {
  double q25 = 0.0;
  double q50 = 0.0;
  double q75 = 0.0;
};

inline Quartiles quartiles(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::vector<double> s(v.begin(), v.end());
  return {quantile(s, 0.25), quantile(s, 0.5), quantile(s, 0.75)};
}

// ---------------------------------------------------------------------------
// Simulation designs

enum class Scenario {
  Independent,     // iid N(0, 1) predictors
  ColumnCorr,      // corr(x_ij, x_ij') = 0.5
  RowCorrDecay,    // corr(x_ij, x_i'j) = 0.5^|i - i'|
};

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Independent: return "independent";
    case Scenario::ColumnCorr: return "column_corr_0.5";
    case Scenario::RowCorrDecay: return "row_corr_decay";
  }
  return "independent";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "independent") return Scenario::Independent;
  if (s == "column_corr_0.5" || s == "column_corr") return Scenario::ColumnCorr;
  if (s == "row_corr_decay" || s == "row_corr") return Scenario::RowCorrDecay;
  throw InvalidArgument("unknown scenario '" + s + "'");
}

struct SimulatedStudy {
  Dataset train;
  Eigen::MatrixXd x_new;  // held-out units, transformed with the training standardization
  Eigen::VectorXd y_new;
  Eigen::VectorXd true_beta;
};

/// Intercept plus p - 1 predictors drawn per scenario, standardized on the
/// training rows to mean 0 and sd 0.5; beta ~ U[-5, 5]^p and
/// y_i ~ Bern(Phi(x_i' beta)). Column j and beta_j use their own RNG streams,
/// so designs with the same seed are nested in p.
inline SimulatedStudy simulate_study(Eigen::Index n, Eigen::Index n_new, Eigen::Index p,
                                     std::uint64_t seed, Scenario scenario = Scenario::Independent) {
  if (n < 2 || p < 1 || n_new < 0) throw InvalidArgument("simulate: need n >= 2, p >= 1, n_new >= 0");
  const Eigen::Index rows = n + n_new;
  const Rng root(seed);
  const Rng x_root = root.split(0);
  const Rng beta_root = root.split(1);
  Rng y_rng = root.split(2);

  Eigen::VectorXd shared(rows);
  if (scenario == Scenario::ColumnCorr) {
    Rng r = root.split(3);
    for (Eigen::Index i = 0; i < rows; ++i) shared[i] = r.normal();
  }

  Eigen::MatrixXd x(rows, p);
  x.col(0).setOnes();
  Standardization stdz;
  stdz.has_intercept = true;
  const double rho_sd = std::sqrt(0.75);
  for (Eigen::Index j = 1; j < p; ++j) {
    Rng r = x_root.split(static_cast<std::uint64_t>(j));
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double e = r.normal();
      switch (scenario) {
        case Scenario::Independent: x(i, j) = e; break;
        case Scenario::ColumnCorr: x(i, j) = std::sqrt(0.5) * (shared[i] + e); break;
        case Scenario::RowCorrDecay: x(i, j) = i == 0 ? e : 0.5 * x(i - 1, j) + rho_sd * e; break;
      }
    }
    const auto [mean, sd] = column_mean_sd(x.col(j).head(n));
    const ColumnTransform tr{mean, sd / kStandardizedSd};
    for (Eigen::Index i = 0; i < rows; ++i) x(i, j) = tr.apply(x(i, j));
    stdz.columns.push_back(tr);
  }

  Eigen::VectorXd beta(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    Rng r = beta_root.split(static_cast<std::uint64_t>(j));
    beta[j] = -5.0 + 10.0 * r.uniform();
  }
  const Eigen::VectorXd eta = x * beta;
  Eigen::VectorXd y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) y[i] = y_rng.uniform() < norm_cdf(eta[i]) ? 1.0 : 0.0;

  SimulatedStudy out;
  out.train.x = x.topRows(n);
  out.train.y = y.head(n);
  out.train.standardization = std::move(stdz);
  out.train.column_names.reserve(static_cast<std::size_t>(p));
  out.train.column_names.emplace_back("(intercept)");
  for (Eigen::Index j = 1; j < p; ++j) out.train.column_names.push_back("x" + std::to_string(j));
  out.x_new = x.bottomRows(n_new);
  out.y_new = y.tail(n_new);
  out.true_beta = beta;
  return out;
}

struct SimulatedDataset {
  Dataset data;
  Eigen::VectorXd true_beta;
};

inline SimulatedDataset simulate_dataset(Eigen::Index n, Eigen::Index p, std::uint64_t seed,
                                         Scenario scenario = Scenario::Independent) {
  SimulatedStudy s = simulate_study(n, 0, p, seed, scenario);
  return {std::move(s.train), std::move(s.true_beta)};
}

// ---------------------------------------------------------------------------
// Method comparison

enum class Method { MF, PFM, Gibbs };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::MF: return "mf";
    case Method::PFM: return "pfm";
    case Method::Gibbs: return "gibbs";
  }
  return "mf";
}

inline Method method_from_string(const std::string& s) {
  if (s == "mf") return Method::MF;
  if (s == "pfm") return Method::PFM;
  if (s == "gibbs") return Method::Gibbs;
  throw InvalidArgument("unknown method '" + s + "'");
}

struct CompareOptions {
  Eigen::Index draws = 20000;            // posterior draws per method for the Wasserstein block
  Eigen::Index predictive_draws = 10000;  // latent draws per unit for the PFM predictive
  MfOptions mf;
  PfmOptions pfm;
  oracle::GibbsOptions gibbs;
  Eigen::Index noise_floor_pairs = 50;  // 0 skips the noise floor
};

struct MethodReport {
  std::string name;
  std::optional<int> iterations;
  std::optional<bool> converged;
  double fit_seconds = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::VectorXd predictive;
  std::optional<double> test_deviance;
  // Against the reference method; empty for the reference itself.
  std::optional<Quartiles> mean_abs_diff;
  std::optional<Quartiles> sd_abs_diff;
  std::optional<Quartiles> pred_abs_diff;
  std::optional<Quartiles> wasserstein;
  Eigen::VectorXd wasserstein_per_coord;
};

/// 2.5% and 97.5% quantiles of log W1 between pairs of independent exact
/// samples, pooled over coordinates and replicate pairs.
struct NoiseFloor {
  double log_w_q025 = 0.0;
  double log_w_q975 = 0.0;
  Eigen::Index pairs = 0;
  Eigen::VectorXd per_coord;  // mean W1 over pairs
};

struct ComparisonReport {
  std::string reference;
  std::vector<MethodReport> methods;
  Eigen::Index n_train = 0;
  Eigen::Index n_holdout = 0;
  Eigen::Index p = 0;
  std::uint64_t seed = 0;
  std::optional<NoiseFloor> noise_floor;
};

namespace detail {

inline Eigen::VectorXd column_sds(const Eigen::MatrixXd& draws) {
  Eigen::VectorXd sd(draws.cols());
  for (Eigen::Index j = 0; j < draws.cols(); ++j) sd[j] = column_mean_sd(draws.col(j)).second;
  return sd;
}

inline Eigen::VectorXd abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs();
}

}  // namespace detail

/// Runs 2 * pairs Gibbs chains of `draws` kept states each.
inline NoiseFloor gibbs_noise_floor(const KernelPrecomp& precomp, oracle::GibbsOptions g, Eigen::Index draws,
                                    Eigen::Index pairs, std::uint64_t seed) {
  if (pairs < 1 || draws < 2) throw InvalidArgument("noise floor needs pairs >= 1 and draws >= 2");
  const Rng root(seed);
  g.n_draws = draws;
  NoiseFloor nf;
  nf.pairs = pairs;
  nf.per_coord = Eigen::VectorXd::Zero(precomp.p());
  std::vector<double> logs;
  logs.reserve(static_cast<std::size_t>(pairs * precomp.p()));
  for (Eigen::Index k = 0; k < pairs; ++k) {
    const auto a = oracle::gibbs_sample(precomp, g, root.split(2 * static_cast<std::uint64_t>(k)).seed());
    const auto b = oracle::gibbs_sample(precomp, g, root.split(2 * static_cast<std::uint64_t>(k) + 1).seed());
    for (Eigen::Index j = 0; j < precomp.p(); ++j) {
      const double w = wasserstein_1d(a.draws_beta.col(j), b.draws_beta.col(j));
      nf.per_coord[j] += w / static_cast<double>(pairs);
      logs.push_back(std::log(w));
    }
  }
  nf.log_w_q025 = quantile(logs, 0.025);
  nf.log_w_q975 = quantile(logs, 0.975);
  return nf;
}

/// Fits every method on the training data and scores coordinates and held-out
/// units against the reference (Gibbs when present, else the first method).
/// Deterministic in (train, holdout, methods, seed) apart from the timings.
inline ComparisonReport compare_methods(const Dataset& train, const Eigen::MatrixXd& x_holdout,
                                        const Eigen::VectorXd& y_holdout, const PriorSpec& prior,
                                        const std::vector<Method>& methods, std::uint64_t seed,
                                        const CompareOptions& opts = {}) {
  if (methods.size() < 2) throw InvalidArgument("compare_methods needs at least two methods");
  if (x_holdout.rows() > 0 && x_holdout.cols() != train.p()) {
    throw DimensionMismatch("holdout columns", train.p(), x_holdout.cols());
  }
  if (y_holdout.size() != 0 && y_holdout.size() != x_holdout.rows()) {
    throw DimensionMismatch("holdout responses", x_holdout.rows(), y_holdout.size());
  }
  using clock = std::chrono::steady_clock;
  const Rng root(seed);

  const auto t0 = clock::now();
  const auto precomp = build_precomp(std::make_shared<const Dataset>(train), prior);
  const double precompute_seconds = std::chrono::duration<double>(clock::now() - t0).count();

  ComparisonReport report;
  report.n_train = train.n();
  report.n_holdout = x_holdout.rows();
  report.p = train.p();
  report.seed = seed;

  std::vector<Eigen::MatrixXd> samples;
  for (const Method m : methods) {
    const auto method_id = static_cast<std::uint64_t>(m);
    Rng rng = root.split(100 + method_id);
    MethodReport r;
    r.name = to_string(m);
    const auto start = clock::now();
    switch (m) {
      case Method::MF: {
        const MfPosterior post = fit_mf(precomp, opts.mf);
        r.iterations = post.iterations;
        r.converged = post.converged;
        r.mean = post.beta_bar;
        r.sd = precomp->v_diag().cwiseSqrt();
        r.predictive = mf_predict_rows(post, x_holdout);
        r.fit_seconds = precompute_seconds + std::chrono::duration<double>(clock::now() - start).count();
        samples.push_back(mf_sample(post, opts.draws, rng));
        break;
      }
      case Method::PFM: {
        const PfmPosterior post = fit_pfm(precomp, opts.pfm);
        r.iterations = post.iterations;
        r.converged = post.converged;
        const PfmMoments mom = pfm_moments(post, 0);
        r.mean = mom.mean;
        r.sd = mom.marginal_vars.cwiseSqrt();
        const auto preds = pfm_predict_rows(post, x_holdout, opts.predictive_draws, rng.split(1).seed());
        r.predictive.resize(x_holdout.rows());
        for (Eigen::Index i = 0; i < x_holdout.rows(); ++i) r.predictive[i] = preds[static_cast<std::size_t>(i)].probability;
        r.fit_seconds = precompute_seconds + std::chrono::duration<double>(clock::now() - start).count();
        samples.push_back(pfm_sample(post, opts.draws, rng));
        break;
      }
      case Method::Gibbs: {
        oracle::GibbsOptions g = opts.gibbs;
        g.n_draws = opts.draws;
        oracle::GibbsChain chain = oracle::gibbs_sample(*precomp, g, rng.split(2).seed());
        r.mean = chain.draws_beta.colwise().mean().transpose();
        r.sd = detail::column_sds(chain.draws_beta);
        r.predictive.resize(x_holdout.rows());
        for (Eigen::Index i = 0; i < x_holdout.rows(); ++i) {
          const Eigen::VectorXd eta = chain.draws_beta * x_holdout.row(i).transpose();
          r.predictive[i] = eta.unaryExpr([](double v) { return norm_cdf(v); }).mean();
        }
        r.fit_seconds = precompute_seconds + std::chrono::duration<double>(clock::now() - start).count();
        samples.push_back(std::move(chain.draws_beta));
        break;
      }
    }
    if (y_holdout.size() > 0) r.test_deviance = test_deviance(y_holdout, r.predictive);
    report.methods.push_back(std::move(r));
  }

  const auto gibbs_it = std::find(methods.begin(), methods.end(), Method::Gibbs);
  const std::size_t ref = gibbs_it != methods.end() ? static_cast<std::size_t>(gibbs_it - methods.begin()) : 0;
  report.reference = report.methods[ref].name;
  if (methods[ref] == Method::Gibbs && opts.noise_floor_pairs > 0) {
    report.noise_floor =
        gibbs_noise_floor(*precomp, opts.gibbs, opts.draws, opts.noise_floor_pairs, root.split(200).seed());
  }

  const MethodReport& rr = report.methods[ref];
  for (std::size_t k = 0; k < report.methods.size(); ++k) {
    if (k == ref) continue;
    MethodReport& r = report.methods[k];
    r.mean_abs_diff = quartiles(detail::abs_diff(r.mean, rr.mean));
    r.sd_abs_diff = quartiles(detail::abs_diff(r.sd, rr.sd));
    if (x_holdout.rows() > 0) r.pred_abs_diff = quartiles(detail::abs_diff(r.predictive, rr.predictive));
    r.wasserstein_per_coord.resize(report.p);
    for (Eigen::Index j = 0; j < report.p; ++j) {
      r.wasserstein_per_coord[j] = wasserstein_1d(samples[k].col(j), samples[ref].col(j));
    }
    r.wasserstein = quartiles(r.wasserstein_per_coord);
  }
  return report;
}

/// Random split of `data` into training rows and round(fraction * n) held-out rows.
inline ComparisonReport compare_methods(const Dataset& data, const PriorSpec& prior,
                                        const std::vector<Method>& methods, double holdout_fraction,
                                        std::uint64_t seed, const CompareOptions& opts = {}) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw InvalidArgument("holdout fraction must lie in [0, 1)");
  }
  const Eigen::Index n = data.n();
  const auto n_hold = static_cast<Eigen::Index>(std::llround(holdout_fraction * static_cast<double>(n)));
  if (n - n_hold < 1) throw InvalidArgument("holdout leaves no training rows");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng split_rng = Rng(seed).split(7);
  std::shuffle(idx.begin(), idx.end(), split_rng.engine());
  std::sort(idx.begin(), idx.begin() + n_hold);
  std::sort(idx.begin() + n_hold, idx.end());

  Dataset train;
  train.column_names = data.column_names;
  train.x.resize(n - n_hold, data.p());
  train.y.resize(n - n_hold);
  Eigen::MatrixXd x_hold(n_hold, data.p());
  Eigen::VectorXd y_hold(n_hold);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index i = idx[static_cast<std::size_t>(k)];
    if (k < n_hold) {
      x_hold.row(k) = data.x.row(i);
      y_hold[k] = data.y[i];
    } else {
      train.x.row(k - n_hold) = data.x.row(i);
      train.y[k - n_hold] = data.y[i];
    }
  }
  return compare_methods(train, x_hold, y_hold, prior, methods, seed, opts);
}

// ---------------------------------------------------------------------------
// Report serialization

namespace detail {

inline nlohmann::json to_json(const Quartiles& q) {
  return {{"q25", q.q25}, {"q50", q.q50}, {"q75", q.q75}};
}

inline std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.begin(), v.end()}; }

}  // namespace detail

inline nlohmann::json report_to_json(const ComparisonReport& rep) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["reference"] = rep.reference;
  j["n_train"] = rep.n_train;
  j["n_holdout"] = rep.n_holdout;
  j["p"] = rep.p;
  j["seed"] = rep.seed;
  if (rep.noise_floor) {
    j["noise_floor"] = {{"log_w_q025", rep.noise_floor->log_w_q025},
                        {"log_w_q975", rep.noise_floor->log_w_q975},
                        {"pairs", rep.noise_floor->pairs}};
  } else {
    j["noise_floor"] = nullptr;
  }
  j["methods"] = nlohmann::json::array();
  for (const auto& m : rep.methods) {
    nlohmann::json mj;
    mj["name"] = m.name;
    mj["iterations"] = m.iterations ? nlohmann::json(*m.iterations) : nlohmann::json(nullptr);
    mj["converged"] = m.converged ? nlohmann::json(*m.converged) : nlohmann::json(nullptr);
    mj["fit_seconds"] = m.fit_seconds;
    mj["test_deviance"] = m.test_deviance ? nlohmann::json(*m.test_deviance) : nlohmann::json(nullptr);
    mj["mean"] = detail::to_vec(m.mean);
    mj["sd"] = detail::to_vec(m.sd);
    mj["predictive"] = detail::to_vec(m.predictive);
    const auto put = [&](const char* key, const std::optional<Quartiles>& q) {
      mj[key] = q ? detail::to_json(*q) : nlohmann::json(nullptr);
    };
    put("mean_abs_diff", m.mean_abs_diff);
    put("sd_abs_diff", m.sd_abs_diff);
    put("pred_abs_diff", m.pred_abs_diff);
    put("wasserstein", m.wasserstein);
    mj["wasserstein_per_coord"] = detail::to_vec(m.wasserstein_per_coord);
    j["methods"].push_back(std::move(mj));
  }
  return j;
}

/// Tidy rows metric,method,quantile,value.
inline std::string report_to_csv(const ComparisonReport& rep) {
  std::string out = "metric,method,quantile,value\n";
  const auto row = [&](const std::string& metric, const std::string& method, const std::string& q, double v) {
    out += metric + "," + method + "," + q + "," + nlohmann::json(v).dump() + "\n";
  };
  for (const auto& m : rep.methods) {
    const auto quart = [&](const char* metric, const std::optional<Quartiles>& q) {
      if (!q) return;
      row(metric, m.name, "0.25", q->q25);
      row(metric, m.name, "0.5", q->q50);
      row(metric, m.name, "0.75", q->q75);
    };
    quart("mean_abs_diff", m.mean_abs_diff);
    quart("sd_abs_diff", m.sd_abs_diff);
    quart("pred_abs_diff", m.pred_abs_diff);
    quart("wasserstein", m.wasserstein);
    if (m.test_deviance) row("test_deviance", m.name, "", *m.test_deviance);
    if (m.iterations) row("iterations", m.name, "", *m.iterations);
    row("fit_seconds", m.name, "", m.fit_seconds);
  }
  if (rep.noise_floor) {
    row("noise_floor_log_wasserstein", rep.reference, "0.025", rep.noise_floor->log_w_q025);
    row("noise_floor_log_wasserstein", rep.reference, "0.975", rep.noise_floor->log_w_q975);
  }
  return out;
}

}  // namespace pfvb
