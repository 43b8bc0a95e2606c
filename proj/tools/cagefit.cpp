// cagefit: estimate, simulate, and score decision rules for two-cage
// binomial classification experiments.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cages/beliefs.hpp"
#include "cages/design.hpp"
#include "cages/estimation.hpp"
#include "cages/io.hpp"
#include "cages/metrics.hpp"
#include "cages/simulate.hpp"

namespace {

using cages::Design;
using cages::FitConfig;
using cages::Trial;

void set_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

struct CommonFitFlags {
  FitConfig config;
  int threads = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", config.seed, "RNG seed");
    cmd->add_option("--restarts", config.restarts, "optimizer restarts")->check(CLI::PositiveNumber);
    cmd->add_option("--tol", config.ll_tol, "relative log-likelihood tolerance");
    cmd->add_option("--nodes", config.quad_nodes, "Gauss-Hermite nodes (mixed logit)");
    cmd->add_option("--max-iter", config.max_iter, "simplex iterations per start");
    cmd->add_option("--em-max-iter", config.em_max_iter, "EM / EC sweeps");
    cmd->add_option("--threads", threads, "OpenMP worker threads (0 = library default)");
  }
};

// Explicit natural-scale parameter flags for `simulate`.
struct ParamFlags {
  double beta0 = 0, beta1 = 1, beta2 = 1;
  double sigma = 0.3, eta = 0;
  double out_weight = 4, out_bias = -2;
  double gamma0 = 0, gamma_d = 0, gamma_pi = 0;
  double epsilon = 0.2;
  std::vector<int> cutoffs;

  void attach(CLI::App* cmd) {
    cmd->add_option("--beta0", beta0, "belief bias");
    cmd->add_option("--beta1", beta1, "LLR weight");
    cmd->add_option("--beta2", beta2, "LPR weight");
    cmd->add_option("--sigma", sigma, "choice noise scale");
    cmd->add_option("--eta", eta, "calculational noise SD");
    cmd->add_option("--out-weight", out_weight, "nn5 output weight");
    cmd->add_option("--out-bias", out_bias, "nn5 output bias");
    cmd->add_option("--gamma0", gamma0, "raw logit constant");
    cmd->add_option("--gamma-d", gamma_d, "raw logit marked-count coefficient");
    cmd->add_option("--gamma-pi", gamma_pi, "raw logit prior coefficient");
    cmd->add_option("--epsilon", epsilon, "cutoff-rule guessing probability");
    cmd->add_option("--cutoffs", cutoffs, "cutoff thresholds, aligned with --priors")
        ->delimiter(',');
  }

  cages::ModelParams build(cages::Family family, const std::vector<double>& priors) const {
    using cages::Family;
    switch (family) {
      case Family::structural_logit:
        return cages::params_from_natural(family, std::vector<double>{beta0, beta1, beta2, sigma});
      case Family::mixed_logit:
        return cages::params_from_natural(family,
                                          std::vector<double>{beta0, beta1, beta2, sigma, eta});
      case Family::noisy_bayes:
        return cages::params_from_natural(family, std::vector<double>{sigma});
      case Family::bayes_beliefs:
        return cages::params_from_natural(family, std::vector<double>{sigma, eta});
      case Family::structural_probit:
      case Family::reduced_logit_transformed:
        return cages::params_from_natural(family, std::vector<double>{beta0, beta1, beta2});
      case Family::reduced_logit_raw:
        return cages::params_from_natural(family, std::vector<double>{gamma0, gamma_d, gamma_pi});
      case Family::nn5:
        return cages::params_from_natural(
            family, std::vector<double>{beta0, beta1, beta2, out_weight, out_bias});
      case Family::intercept_logit:
        return cages::params_from_natural(family, std::vector<double>{gamma0});
      case Family::cutoff_rule: {
        cages::CutoffParams params;
        if (cutoffs.size() != priors.size())
          throw CLI::ValidationError("--cutoffs must list one threshold per prior");
        for (std::size_t i = 0; i < priors.size(); ++i)
          params.cutoffs.emplace_back(priors[i], cutoffs[i]);
        params.epsilon = epsilon;
        return params;
      }
    }
    throw CLI::ValidationError("unknown model family");
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Structural models of Bayesian decision-making in two-cage experiments"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // ---- posterior ----------------------------------------------------------
  auto* posterior = app.add_subcommand("posterior", "Bayes posterior and choice for one trial");
  double prior = 0.5, pa = 0.5, pb = 0.5;
  int draws = 0, marked = 0;
  posterior->add_option("--prior", prior, "prior probability of cage A")->required();
  posterior->add_option("--pa", pa, "marked-ball rate in cage A")->required();
  posterior->add_option("--pb", pb, "marked-ball rate in cage B")->required();
  posterior->add_option("--draws", draws, "number of draws")->required();
  posterior->add_option("--marked", marked, "marked balls observed")->required();
  posterior->callback([&] {
    const Trial trial{prior, marked, Design{pa, pb, draws}};
    const cages::PosteriorPair post = cages::bayes_posterior(trial);
    std::printf("LLR %.6f\n", post.llr);
    std::printf("LPR %.6f\n", post.lpr);
    std::printf("posterior %.6f\n", post.pi_a);
    std::printf("choice %c\n", cages::to_char(cages::bayes_choice(trial)));
    if (!cages::informative(trial.design))
      std::printf("note: p_a == p_b, the sample carries no information\n");
  });

  // ---- cutoffs ------------------------------------------------------------
  auto* cutoffs_cmd = app.add_subcommand("cutoffs", "Bayes-rule integer cutoff table");
  std::vector<double> cutoff_priors;
  cutoffs_cmd->add_option("--pa", pa)->required();
  cutoffs_cmd->add_option("--pb", pb)->required();
  cutoffs_cmd->add_option("--draws", draws)->required();
  cutoffs_cmd->add_option("--priors", cutoff_priors, "comma-separated prior list")
      ->required()
      ->delimiter(',');
  cutoffs_cmd->callback([&] {
    const Design design{pa, pb, draws};
    std::printf("prior,cutoff\n");
    for (double p : cutoff_priors)
      std::printf("%s,%d\n", cages::format_double(p).c_str(), cages::bayes_cutoff(design, p));
    if (pa < pb)
      std::printf("# reversed design: choose A when draws - marked > cutoff\n");
  });

  // ---- simulate -----------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic panel");
  CommonFitFlags sim_flags;
  ParamFlags sim_params;
  std::string sim_model = "noisy-bayes", sim_out, sim_mode = "choice", sim_fit_json;
  std::vector<double> sim_priors{1.0 / 3, 0.5, 2.0 / 3};
  int sim_subjects = 100, sim_trials = 20;
  pa = 2.0 / 3;
  pb = 0.5;
  draws = 6;
  simulate->add_option("--out", sim_out, "output CSV path")->required();
  simulate->add_option("--model", sim_model, "model family");
  simulate->add_option("--fit", sim_fit_json, "simulate from a fitted-results JSON instead");
  simulate->add_option("--mode", sim_mode, "choice|report")
      ->check(CLI::IsMember({"choice", "report"}));
  simulate->add_option("--subjects", sim_subjects)->check(CLI::PositiveNumber);
  simulate->add_option("--trials", sim_trials)->check(CLI::PositiveNumber);
  simulate->add_option("--pa", pa);
  simulate->add_option("--pb", pb);
  simulate->add_option("--draws", draws);
  simulate->add_option("--priors", sim_priors, "priors cycled over trials")->delimiter(',');
  sim_params.attach(simulate);
  sim_flags.attach(simulate);
  simulate->callback([&] {
    set_threads(sim_flags.threads);
    cages::SimSpec spec;
    spec.schedule = cages::repeated_schedule(Design{pa, pb, draws}, sim_priors, sim_trials);
    spec.subjects = sim_subjects;
    spec.seed = sim_flags.config.seed;
    if (!sim_fit_json.empty()) {
      const cages::FitResult fit = cages::read_fit_json(sim_fit_json);
      spec.model = cages::MixtureSpec{fit.thetas, fit.lambdas};
    } else {
      const cages::Family family = cages::family_from_name(sim_model);
      spec.model = cages::MixtureSpec{{sim_params.build(family, sim_priors)}, {1.0}};
    }
    if (sim_mode == "choice") {
      cages::write_choice_dataset(cages::simulate_choice_panel(spec).data, sim_out);
    } else {
      const auto result = cages::simulate_report_panel(spec);
      cages::write_report_dataset(result.reports, sim_out);
    }
  });

  // ---- fit ----------------------------------------------------------------
  auto* fit_cmd = app.add_subcommand("fit", "Maximum-likelihood estimation");
  CommonFitFlags fit_flags;
  std::string fit_data, fit_out, fit_model = "structural-logit", fit_restrict;
  int mixture_k = 0, ec_k = 0;
  fit_cmd->add_option("--data", fit_data, "trials CSV")->required();
  fit_cmd->add_option("--out", fit_out, "results JSON path");
  fit_cmd->add_option("--model", fit_model, "model family");
  fit_cmd->add_option("--mixture", mixture_k, "finite-mixture type count");
  fit_cmd->add_option("--ec", ec_k, "estimation-classification type count");
  fit_cmd->add_option("--restrict", fit_restrict, "noisy-bayes|bayes-beliefs")
      ->check(CLI::IsMember({"noisy-bayes", "bayes-beliefs"}));
  bool mirror_display = false;
  fit_cmd->add_flag("--mirror-display", mirror_display,
                    "also print belief weights in the mirrored sign convention");
  fit_flags.attach(fit_cmd);
  fit_cmd->callback([&] {
    set_threads(fit_flags.threads);
    cages::Family family = cages::family_from_name(fit_model);
    if (!fit_restrict.empty()) {
      if (family != cages::Family::structural_logit && family != cages::Family::mixed_logit)
        throw CLI::ValidationError("--restrict applies to the structural logit family");
      family = cages::family_from_name(fit_restrict);
    }
    if (mixture_k > 0 && ec_k > 0)
      throw CLI::ValidationError("choose one of --mixture and --ec");
    const cages::Dataset data = cages::load_choice_dataset(fit_data);
    cages::FitResult result;
    if (mixture_k > 0)
      result = cages::fit_mixture_em(family, mixture_k, data, fit_flags.config);
    else if (ec_k > 0)
      result = cages::fit_ec(family, ec_k, data, fit_flags.config);
    else
      result = cages::fit_mle(family, data, fit_flags.config);
    if (fit_out.empty())
      std::cout << cages::fit_to_json(result).dump(2) << '\n';
    else
      cages::write_fit_json(result, fit_out);
    if (mirror_display) {
      // Some published tables report beliefs with flipped signs; JSON output
      // stays in the canonical convention (Bayes at beta = (0, 1, 1)).
      std::printf("mirrored-convention belief weights (display only):\n");
      const auto names = cages::param_names(result.family, &result.thetas[0]);
      for (std::size_t t = 0; t < result.thetas.size(); ++t) {
        const auto nat = cages::natural_params(result.family, result.thetas[t]);
        std::printf("  type %zu:", t + 1);
        for (std::size_t i = 0; i < names.size(); ++i) {
          const bool belief = names[i].rfind("beta", 0) == 0;
          std::printf(" %s=%g", names[i].c_str(), belief ? -nat[i] : nat[i]);
        }
        std::printf("\n");
      }
    }
  });

  // ---- metrics ------------------------------------------------------------
  auto* metrics_cmd = app.add_subcommand("metrics", "Accuracy, efficiency, loss curves");
  CommonFitFlags metric_flags;
  std::string metrics_data, metrics_fit, metrics_out, loss_csv;
  int curve_points = 0;
  metrics_cmd->add_option("--data", metrics_data, "trials CSV")->required();
  metrics_cmd->add_option("--fit", metrics_fit, "fitted-results JSON for model-based scores");
  metrics_cmd->add_option("--out", metrics_out, "metrics JSON path");
  metrics_cmd->add_option("--loss-curve", loss_csv, "loss-curve CSV path (needs --fit)");
  metrics_cmd->add_option("--curve-points", curve_points,
                          "extra evenly spaced grid priors for the curve");
  metric_flags.attach(metrics_cmd);
  metrics_cmd->callback([&] {
    set_threads(metric_flags.threads);
    const cages::Dataset data = cages::load_choice_dataset(metrics_data);
    cages::ScoreCard card = cages::subject_scores(data);

    nlohmann::ordered_json j;
    if (!metrics_fit.empty()) {
      const cages::FitResult fit = cages::read_fit_json(metrics_fit);
      if (fit.thetas.size() != 1)
        throw CLI::ValidationError("metrics --fit expects a single-type fit");
      const cages::DesignWeights weights = cages::uniform_design_weights(data);
      const cages::ScoreCard model_card = cages::overall_efficiency(
          fit.thetas[0], weights, metric_flags.config.quad_nodes);
      card.win = model_card.win;
      card.loss = model_card.loss;
      card.efficiency = model_card.efficiency;

      if (!loss_csv.empty()) {
        Design design = weights.cells.front().design;
        for (const auto& cell : weights.cells)
          if (cell.design.p_a != design.p_a || cell.design.p_b != design.p_b ||
              cell.design.draws != design.draws)
            throw CLI::ValidationError("--loss-curve needs a single design in the data");
        std::vector<double> grid;
        for (const auto& cell : weights.cells) grid.push_back(cell.prior);
        for (int i = 1; i <= curve_points; ++i) grid.push_back(i / (curve_points + 1.0));
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        const auto curve =
            cages::loss_curve(fit.thetas[0], design, grid, metric_flags.config.quad_nodes);
        cages::write_loss_curve_csv(curve, loss_csv);
      }
    } else if (!loss_csv.empty()) {
      throw CLI::ValidationError("--loss-curve needs --fit");
    }
    j = cages::scorecard_to_json(card);
    if (metrics_out.empty())
      std::cout << j.dump(2) << '\n';
    else {
      std::ofstream out(metrics_out);
      if (!out) throw std::runtime_error(metrics_out + ": cannot open for writing");
      out << j.dump(2) << '\n';
    }
  });

  // ---- compare ------------------------------------------------------------
  auto* compare = app.add_subcommand("compare", "AIC table, LR and Vuong tests");
  CommonFitFlags cmp_flags;
  std::string cmp_data, cmp_out;
  std::vector<std::string> cmp_fits;
  bool nested = false;
  compare->add_option("--data", cmp_data, "trials CSV")->required();
  compare->add_option("--fits", cmp_fits, "two or more fitted-results JSON files")
      ->required()
      ->delimiter(',');
  compare->add_flag("--nested", nested, "run LR tests on consecutive pairs");
  compare->add_option("--out", cmp_out, "comparison JSON path");
  cmp_flags.attach(compare);
  compare->callback([&] {
    set_threads(cmp_flags.threads);
    if (cmp_fits.size() < 2) throw CLI::ValidationError("--fits needs at least two files");
    const cages::Dataset data = cages::load_choice_dataset(cmp_data);
    std::vector<cages::FitResult> fits;
    for (const auto& path : cmp_fits) fits.push_back(cages::read_fit_json(path));

    nlohmann::ordered_json j;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < fits.size(); ++i)
      table.push_back({{"model", cages::family_name(fits[i].family)},
                       {"file", cmp_fits[i]},
                       {"n_params", fits[i].n_params},
                       {"loglik", fits[i].loglik},
                       {"aic", fits[i].aic}});
    j["models"] = table;

    nlohmann::ordered_json tests;
    if (nested) {
      nlohmann::ordered_json lr_tests = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i + 1 < fits.size(); ++i) {
        const bool fwd = fits[i + 1].n_params >= fits[i].n_params;
        const cages::FitResult& full = fwd ? fits[i + 1] : fits[i];
        const cages::FitResult& restricted = fwd ? fits[i] : fits[i + 1];
        const cages::LrAicResult lr = cages::lr_aic(full, restricted);
        lr_tests.push_back({{"full", cages::family_name(full.family)},
                            {"restricted", cages::family_name(restricted.family)},
                            {"lr", lr.lr},
                            {"df", lr.df},
                            {"p_value", lr.p_value}});
      }
      tests["lr"] = lr_tests;
    }
    nlohmann::ordered_json vuong_tests = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < fits.size(); ++i)
      for (std::size_t k = i + 1; k < fits.size(); ++k) {
        if (fits[i].thetas.size() != 1 || fits[k].thetas.size() != 1) continue;
        const cages::VuongResult v =
            cages::vuong_test(fits[i], fits[k], data, cmp_flags.config.quad_nodes);
        vuong_tests.push_back({{"a", cages::family_name(fits[i].family)},
                               {"b", cages::family_name(fits[k].family)},
                               {"statistic", v.statistic},
                               {"p_value", v.p_value},
                               {"n", v.n}});
      }
    tests["vuong"] = vuong_tests;
    j["tests"] = tests;

    if (cmp_out.empty())
      std::cout << j.dump(2) << '\n';
    else {
      std::ofstream out(cmp_out);
      if (!out) throw std::runtime_error(cmp_out + ": cannot open for writing");
      out << j.dump(2) << '\n';
    }
  });

  // ---- beliefs ------------------------------------------------------------
  auto* beliefs = app.add_subcommand("beliefs", "Elicited-belief analysis");
  beliefs->require_subcommand(1);
  auto* bel_fit = beliefs->add_subcommand("fit", "Censored log-odds belief regression");
  CommonFitFlags bel_flags;
  std::string bel_data, bel_out;
  bool drop_censored = false;
  bel_fit->add_option("--data", bel_data, "reports CSV")->required();
  bel_fit->add_option("--out", bel_out, "results JSON path");
  bel_fit->add_flag("--drop-censored", drop_censored, "discard reports of exactly 0/1");
  bel_flags.attach(bel_fit);
  bel_fit->callback([&] {
    set_threads(bel_flags.threads);
    const std::vector<cages::ReportTrial> reports = cages::load_report_dataset(bel_data);
    const cages::BeliefFit fit =
        cages::fit_belief_regression(reports, bel_flags.config, drop_censored);
    const nlohmann::ordered_json j = cages::belief_fit_to_json(fit);
    if (bel_out.empty())
      std::cout << j.dump(2) << '\n';
    else {
      std::ofstream out(bel_out);
      if (!out) throw std::runtime_error(bel_out + ": cannot open for writing");
      out << j.dump(2) << '\n';
    }
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
