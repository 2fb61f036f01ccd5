#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pfvb.hpp"
#include "pfvb/oracle.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct PriorFlags {
  double sd = 5.0;
  std::string scaling = "const";

  pfvb::PriorSpec spec() const {
    if (!(sd > 0.0)) throw pfvb::InvalidArgument("--prior-sd must be positive");
    if (scaling != "const" && scaling != "inv-p") throw pfvb::InvalidArgument("--prior-scaling must be const or inv-p");
    return pfvb::PriorSpec::from_sd(sd, scaling == "const" ? pfvb::PriorScaling::Constant : pfvb::PriorScaling::InverseP);
  }
};

struct DataFlags {
  std::string input;
  std::string response = "y";
  bool pairwise = false;
  bool no_standardize = false;
  bool no_intercept = false;

  pfvb::IngestOptions options() const {
    pfvb::IngestOptions o;
    o.response = response;
    o.standardize = !no_standardize;
    o.add_intercept = !no_intercept;
    o.pairwise_interactions = pairwise;
    return o;
  }
};

void add_prior_flags(CLI::App* cmd, PriorFlags& f) {
  cmd->add_option("--prior-sd", f.sd, "prior standard deviation nu")->capture_default_str();
  cmd->add_option("--prior-scaling", f.scaling, "const: nu^2, inv-p: nu^2 / p")
      ->check(CLI::IsMember({"const", "inv-p"}))
      ->capture_default_str();
}

void add_data_flags(CLI::App* cmd, DataFlags& f, bool input_required) {
  auto* in = cmd->add_option("--input", f.input, "CSV with a header row");
  if (input_required) in->required();
  cmd->add_option("--response", f.response, "binary response column")->capture_default_str();
  cmd->add_flag("--pairwise-interactions", f.pairwise, "append all pairwise products before standardizing");
  cmd->add_flag("--no-standardize", f.no_standardize, "keep predictors on their raw scale");
  cmd->add_flag("--no-intercept", f.no_intercept, "do not prepend an intercept column");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pfvb::IoError("cannot open '" + path + "' for writing");
  return out;
}

void warn_gibbs_scale(Eigen::Index n, Eigen::Index p) {
  if (!pfvb::oracle::within_gibbs_scale_policy(n, p)) {
    std::cerr << "warning: Gibbs sampling at n=" << n << ", p=" << p << " exceeds the oracle scale policy (n <= "
              << pfvb::oracle::kGibbsMaxN << ", p <= " << pfvb::oracle::kGibbsMaxP << "); this may be slow\n";
  }
}

std::vector<std::string> beta_names(const pfvb::Dataset& d) {
  if (!d.column_names.empty()) return d.column_names;
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < d.p(); ++j) names.push_back("x" + std::to_string(j));
  return names;
}

// ---------------------------------------------------------------------------

struct FitCmd {
  DataFlags data;
  PriorFlags prior;
  std::string method = "pfm";
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<std::uint64_t> seed;
  long mc_samples = 20000;
  std::string out;
};

int run_fit(const FitCmd& c) {
  const pfvb::PriorSpec prior = c.prior.spec();
  const auto ingested = pfvb::ingest_csv(c.data.input, c.data.options());
  pfvb::ModelArtifact art;
  art.method = c.method;
  art.prior = prior;
  art.features = ingested.features;
  art.training = ingested.data;
  art.seed = c.seed.value_or(0);

  const auto t0 = clock_type::now();
  const auto precomp = pfvb::build_precomp(std::make_shared<const pfvb::Dataset>(art.training), prior);
  art.precompute_seconds = seconds_since(t0);

  const auto t1 = clock_type::now();
  if (c.method == "mf") {
    pfvb::MfOptions o;
    o.tolerance = c.tol.value_or(o.tolerance);
    o.max_iter = c.max_iter.value_or(o.max_iter);
    const auto post = pfvb::fit_mf(precomp, o);
    art.tolerance = o.tolerance;
    art.max_iter = o.max_iter;
    art.beta_bar = post.beta_bar;
    art.z_bar_star = post.z_bar;
    art.trace = post.trace;
    art.iterations = post.iterations;
    art.converged = post.converged;
  } else if (c.method == "pfm") {
    pfvb::PfmOptions o;
    o.tolerance = c.tol.value_or(o.tolerance);
    o.max_iter = c.max_iter.value_or(o.max_iter);
    const auto post = pfvb::fit_pfm(precomp, o);
    art.tolerance = o.tolerance;
    art.max_iter = o.max_iter;
    art.mu_star = post.mu_star;
    art.sigma_star = post.sigma_star;
    art.z_bar_star = post.z_bar_star;
    art.trace = post.elbo_trace;
    art.iterations = post.iterations;
    art.converged = post.converged;
  } else {
    if (!c.seed) throw pfvb::InvalidArgument("--seed is required for --method gibbs");
    warn_gibbs_scale(art.training.n(), art.training.p());
    pfvb::oracle::GibbsOptions o;
    o.n_draws = c.mc_samples;
    o.enforce_scale_policy = false;
    art.draws = pfvb::oracle::gibbs_sample(*precomp, o, *c.seed).draws_beta;
    art.converged = true;
  }
  art.fit_seconds = seconds_since(t1);
  pfvb::save_artifact(c.out, art);

  nlohmann::json summary = {{"method", art.method},   {"n", art.training.n()},
                            {"p", art.training.p()},  {"iterations", art.iterations},
                            {"converged", art.converged}, {"fit_seconds", art.fit_seconds},
                            {"model", c.out}};
  std::cout << summary.dump() << "\n";
  if (!art.converged) {
    std::cerr << "warning: reached --max-iter " << art.max_iter << " before convergence\n";
    return pfvb::kExitMaxIterExceeded;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictCmd {
  std::string model;
  std::string input;
  long mc_samples = 10000;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_predict(const PredictCmd& c) {
  const auto art = pfvb::load_artifact(c.model);
  const auto nd = pfvb::design_from_csv(c.input, art.features);
  const Eigen::Index rows = nd.x.rows();
  Eigen::VectorXd prob(rows);
  Eigen::VectorXd se = Eigen::VectorXd::Zero(rows);
  if (art.method == "mf") {
    prob = pfvb::mf_predict_rows(pfvb::artifact_mf(art), nd.x);
  } else if (art.method == "pfm") {
    if (!c.seed) throw pfvb::InvalidArgument("--seed is required to predict from a pfm model");
    const auto est = pfvb::pfm_predict_rows(pfvb::artifact_pfm(art), nd.x, c.mc_samples, *c.seed);
    for (Eigen::Index r = 0; r < rows; ++r) {
      prob[r] = est[static_cast<std::size_t>(r)].probability;
      se[r] = est[static_cast<std::size_t>(r)].std_error;
    }
  } else {
    const Eigen::MatrixXd eta = art.draws * nd.x.transpose();
    const double m = static_cast<double>(eta.rows());
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::ArrayXd phi = eta.col(r).unaryExpr([](double v) { return pfvb::norm_cdf(v); }).array();
      prob[r] = phi.mean();
      se[r] = m > 1 ? std::sqrt((phi - prob[r]).square().sum() / (m - 1) / m) : 0.0;
    }
  }

  Eigen::MatrixXd table(rows, 2);
  table.col(0) = prob;
  table.col(1) = se;
  auto out = open_out(c.out);
  pfvb::write_matrix_csv(out, table, {"probability", "std_error"});
  if (!out) throw pfvb::IoError("write to '" + c.out + "' failed");

  nlohmann::json summary = {{"method", art.method}, {"rows", rows}, {"predictions", c.out}};
  if (nd.y) summary["test_deviance"] = pfvb::test_deviance(*nd.y, prob);
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SampleCmd {
  std::string model;
  long mc_samples = 20000;
  std::uint64_t seed = 0;
  bool marginals_only = false;
  std::string out;
};

int run_sample(const SampleCmd& c) {
  const auto art = pfvb::load_artifact(c.model);
  pfvb::Rng rng(c.seed);
  Eigen::MatrixXd draws;
  if (art.method == "mf") {
    draws = pfvb::mf_sample(pfvb::artifact_mf(art), c.mc_samples, rng);
  } else if (art.method == "pfm") {
    draws = pfvb::pfm_sample(pfvb::artifact_pfm(art), c.mc_samples, rng, c.marginals_only);
  } else {
    // Resample stored chain states with replacement.
    draws.resize(c.mc_samples, art.draws.cols());
    for (long r = 0; r < c.mc_samples; ++r) {
      const auto k = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(art.draws.rows()));
      draws.row(r) = art.draws.row(std::min(k, art.draws.rows() - 1));
    }
  }
  auto out = open_out(c.out);
  pfvb::write_matrix_csv(out, draws, beta_names(art.training));
  if (!out) throw pfvb::IoError("write to '" + c.out + "' failed");
  std::cout << nlohmann::json{{"method", art.method}, {"draws", c.mc_samples}, {"samples", c.out}}.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SimulateCmd {
  long n = 50;
  long p = 200;
  long n_new = 0;
  std::uint64_t seed = 0;
  std::string scenario = "independent";
  std::string out;
  std::string out_new;
  std::string out_beta;
};

void write_simulated(const std::string& path, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  pfvb::Dataset d;
  d.x = x.rightCols(x.cols() - 1);
  d.y = y;
  for (Eigen::Index j = 1; j < x.cols(); ++j) d.column_names.push_back("x" + std::to_string(j));
  auto out = open_out(path);
  pfvb::write_dataset_csv(out, d, "y");
  if (!out) throw pfvb::IoError("write to '" + path + "' failed");
}

int run_simulate(const SimulateCmd& c) {
  if (c.n_new > 0 && c.out_new.empty()) throw pfvb::InvalidArgument("--n-new needs --out-new");
  const auto study = pfvb::simulate_study(c.n, c.n_new, c.p, c.seed, pfvb::scenario_from_string(c.scenario));
  write_simulated(c.out, study.train.x, study.train.y);
  if (c.n_new > 0) write_simulated(c.out_new, study.x_new, study.y_new);
  if (!c.out_beta.empty()) {
    auto out = open_out(c.out_beta);
    pfvb::write_matrix_csv(out, study.true_beta, {"beta"});
  }
  std::cout << nlohmann::json{{"n", c.n}, {"p", c.p}, {"n_new", c.n_new}, {"scenario", c.scenario}, {"data", c.out}}
                   .dump()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareCmd {
  DataFlags data;
  PriorFlags prior;
  std::string methods = "mf,pfm,gibbs";
  double holdout_fraction = 0.2;
  long sim_n = 0;
  long sim_p = 0;
  long sim_new = 100;
  std::string scenario = "independent";
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::uint64_t seed = 0;
  long mc_samples = 20000;
  long predictive_samples = 10000;
  long noise_pairs = 50;
  std::string out;
  std::string out_csv;
};

std::vector<pfvb::Method> parse_methods(const std::string& list) {
  std::vector<pfvb::Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(pfvb::method_from_string(item));
  }
  return out;
}

int run_compare(const CompareCmd& c) {
  const auto methods = parse_methods(c.methods);
  const pfvb::PriorSpec prior = c.prior.spec();
  pfvb::CompareOptions opts;
  opts.draws = c.mc_samples;
  opts.predictive_draws = c.predictive_samples;
  opts.noise_floor_pairs = c.noise_pairs;
  if (c.tol) opts.mf.tolerance = opts.pfm.tolerance = *c.tol;
  if (c.max_iter) opts.mf.max_iter = opts.pfm.max_iter = *c.max_iter;
  opts.gibbs.enforce_scale_policy = false;

  const bool simulate = c.sim_n > 0 || c.sim_p > 0;
  if (simulate == !c.data.input.empty()) {
    throw pfvb::InvalidArgument("compare needs exactly one of --input or --simulate-n/--simulate-p");
  }
  const bool with_gibbs = std::find(methods.begin(), methods.end(), pfvb::Method::Gibbs) != methods.end();

  pfvb::ComparisonReport report;
  if (simulate) {
    if (c.sim_n < 2 || c.sim_p < 1) throw pfvb::InvalidArgument("--simulate-n and --simulate-p must both be set");
    const auto study = pfvb::simulate_study(c.sim_n, c.sim_new, c.sim_p, c.seed, pfvb::scenario_from_string(c.scenario));
    if (with_gibbs) warn_gibbs_scale(study.train.n(), study.train.p());
    report = pfvb::compare_methods(study.train, study.x_new, study.y_new, prior, methods, c.seed, opts);
  } else {
    const auto ingested = pfvb::ingest_csv(c.data.input, c.data.options());
    if (with_gibbs) warn_gibbs_scale(ingested.data.n(), ingested.data.p());
    report = pfvb::compare_methods(ingested.data, prior, methods, c.holdout_fraction, c.seed, opts);
  }
  pfvb::write_text_file(c.out, pfvb::report_to_json(report).dump(1) + "\n");
  if (!c.out_csv.empty()) pfvb::write_text_file(c.out_csv, pfvb::report_to_csv(report));

  nlohmann::json summary = {{"reference", report.reference}, {"report", c.out}};
  for (const auto& m : report.methods) {
    nlohmann::json mj = {{"fit_seconds", m.fit_seconds}};
    if (m.iterations) mj["iterations"] = *m.iterations;
    if (m.test_deviance) mj["test_deviance"] = *m.test_deviance;
    summary["methods"][m.name] = mj;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayes for high-dimensional probit regression"};
  app.require_subcommand(1);

  FitCmd fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model and write it as JSON");
  add_data_flags(fit_cmd, fit.data, true);
  add_prior_flags(fit_cmd, fit.prior);
  fit_cmd->add_option("--method", fit.method, "mf | pfm | gibbs")
      ->check(CLI::IsMember({"mf", "pfm", "gibbs"}))
      ->capture_default_str();
  fit_cmd->add_option("--tol", fit.tol, "absolute change in the monitored objective");
  fit_cmd->add_option("--max-iter", fit.max_iter, "iteration cap");
  fit_cmd->add_option("--seed", fit.seed, "RNG seed (gibbs)");
  fit_cmd->add_option("--mc-samples", fit.mc_samples, "kept Gibbs draws")->capture_default_str();
  fit_cmd->add_option("--out", fit.out, "model JSON")->required();

  PredictCmd pred;
  auto* pred_cmd = app.add_subcommand("predict", "predictive probabilities for new rows");
  pred_cmd->add_option("--model", pred.model, "model JSON from fit")->required();
  pred_cmd->add_option("--input", pred.input, "CSV with the training predictor columns")->required();
  pred_cmd->add_option("--mc-samples", pred.mc_samples, "latent draws per row (pfm)")->capture_default_str();
  pred_cmd->add_option("--seed", pred.seed, "RNG seed (pfm)");
  pred_cmd->add_option("--out", pred.out, "output CSV")->required();

  SampleCmd samp;
  auto* samp_cmd = app.add_subcommand("sample", "i.i.d. draws from the fitted approximation");
  samp_cmd->add_option("--model", samp.model, "model JSON from fit")->required();
  samp_cmd->add_option("--mc-samples", samp.mc_samples, "number of draws")->capture_default_str();
  samp_cmd->add_option("--seed", samp.seed, "RNG seed")->required();
  samp_cmd->add_flag("--marginals-only", samp.marginals_only, "exact marginals only (pfm)");
  samp_cmd->add_option("--out", samp.out, "output CSV")->required();

  SimulateCmd sim;
  auto* sim_cmd = app.add_subcommand("simulate", "simulate a standardized probit dataset");
  sim_cmd->add_option("--n", sim.n, "training rows")->capture_default_str();
  sim_cmd->add_option("--p", sim.p, "coefficients including the intercept")->capture_default_str();
  sim_cmd->add_option("--n-new", sim.n_new, "held-out rows")->capture_default_str();
  sim_cmd->add_option("--scenario", sim.scenario, "independent | column_corr_0.5 | row_corr_decay")
      ->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "RNG seed")->required();
  sim_cmd->add_option("--out", sim.out, "training CSV")->required();
  sim_cmd->add_option("--out-new", sim.out_new, "held-out CSV");
  sim_cmd->add_option("--out-beta", sim.out_beta, "true coefficients CSV");

  CompareCmd cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "compare methods on coordinates and held-out units");
  add_data_flags(cmp_cmd, cmp.data, false);
  add_prior_flags(cmp_cmd, cmp.prior);
  cmp_cmd->add_option("--methods", cmp.methods, "comma separated, at least two of mf,pfm,gibbs")
      ->capture_default_str();
  cmp_cmd->add_option("--holdout-fraction", cmp.holdout_fraction, "held-out share of --input rows")
      ->capture_default_str();
  cmp_cmd->add_option("--simulate-n", cmp.sim_n, "simulate training rows instead of reading --input");
  cmp_cmd->add_option("--simulate-p", cmp.sim_p, "simulated coefficients including the intercept");
  cmp_cmd->add_option("--simulate-new", cmp.sim_new, "simulated held-out rows")->capture_default_str();
  cmp_cmd->add_option("--scenario", cmp.scenario, "simulation scenario")->capture_default_str();
  cmp_cmd->add_option("--tol", cmp.tol, "objective tolerance for mf and pfm");
  cmp_cmd->add_option("--max-iter", cmp.max_iter, "iteration cap for mf and pfm");
  cmp_cmd->add_option("--seed", cmp.seed, "RNG seed")->required();
  cmp_cmd->add_option("--mc-samples", cmp.mc_samples, "posterior draws per method")->capture_default_str();
  cmp_cmd->add_option("--predictive-samples", cmp.predictive_samples, "latent draws per held-out row (pfm)")
      ->capture_default_str();
  cmp_cmd->add_option("--noise-pairs", cmp.noise_pairs, "independent Gibbs chain pairs for the noise floor (0 skips)")
      ->capture_default_str();
  cmp_cmd->add_option("--out", cmp.out, "report JSON")->required();
  cmp_cmd->add_option("--out-csv", cmp.out_csv, "tidy report CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "fit") return run_fit(fit);
    if (name == "predict") return run_predict(pred);
    if (name == "sample") return run_sample(samp);
    if (name == "simulate") return run_simulate(sim);
    return run_compare(cmp);
  } catch (const pfvb::Error& e) {
    std::cerr << "pfvb " << name << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "pfvb " << name << ": " << e.what() << "\n";
    return 1;
  }
}
