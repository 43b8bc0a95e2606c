#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "cages/metrics.hpp"
#include "cages/simulate.hpp"

using namespace cages;

namespace {
const Design kCalifornia{2.0 / 3.0, 0.5, 6};
const std::vector<double> kPriors{1.0 / 3.0, 0.5, 2.0 / 3.0};
const ModelParams kBayes = StructuralLogitParams{{0, 1, 1}, 0.0, 0.0};
const ModelParams kCoinFlip = RawLogitParams{0, 0, 0};

DesignWeights california_weights() {
  DesignWeights w;
  for (double prior : kPriors) w.cells.push_back({1.0 / 3.0, prior, kCalifornia});
  return w;
}

CutoffParams bayes_cutoffs_with_guessing(const Design& design, std::vector<double> priors,
                                         double epsilon) {
  CutoffParams p;
  for (double prior : priors) p.cutoffs.emplace_back(prior, bayes_cutoff(design, prior));
  p.epsilon = epsilon;
  return p;
}
}  // namespace

TEST_CASE("win and loss") {
  CHECK(win_loss(0.5, 0.23).win == doctest::Approx(0.5));
  CHECK(win_loss(0.5, 0.9).win == doctest::Approx(0.5));
  for (double pi : {0.1, 0.5, 0.692308}) {
    const WinLoss wl = win_loss(pi, pi);
    CHECK(wl.win == doctest::Approx(pi * pi + (1 - pi) * (1 - pi)).epsilon(1e-12));
    CHECK(wl.win + wl.loss == 1.0);
  }
  CHECK(win_loss(1.0, 0.692308).win == doctest::Approx(0.692308));
  CHECK_THROWS_AS(win_loss(1.2, 0.5), std::domain_error);
}

TEST_CASE("loss curves") {
  SUBCASE("the optimal rule has zero loss at a degenerate prior") {
    const auto curve = loss_curve(kBayes, kCalifornia, std::vector<double>{0.0, 1.0});
    CHECK(curve[0].loss == doctest::Approx(0.0));
    CHECK(curve[1].loss == doctest::Approx(0.0));
  }
  SUBCASE("a guessing cutoff rule loses epsilon/2 at prior 0") {
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const ModelParams cutoff = bayes_cutoffs_with_guessing(kCalifornia, grid, 0.1);
    const auto curve = loss_curve(cutoff, kCalifornia, grid);
    CHECK(curve[0].loss == doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("the Bayesian curve minorizes every model curve (exhaustive small designs)") {
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
    for (int draws : {1, 4, 7, 10}) {
      const Design design{2.0 / 3.0, 0.5, draws};
      const auto bayes_curve = loss_curve(kBayes, design, grid);
      const std::vector<ModelParams> rivals = {
          StructuralLogitParams{{0, 1, 1}, 0.3, 0},
          StructuralLogitParams{{0.2, 1.6, 0.6}, 0.25, 0},
          ProbitParams{{0, 1, 1}},
          bayes_cutoffs_with_guessing(design, grid, 0.1),
      };
      for (const auto& rival : rivals) {
        const auto curve = loss_curve(rival, design, grid);
        for (std::size_t i = 0; i < grid.size(); ++i)
          CHECK(bayes_curve[i].loss <= curve[i].loss + 1e-12);
      }
    }
  }
}

TEST_CASE("overall efficiency") {
  const DesignWeights weights = california_weights();

  SUBCASE("the Bayesian rule is fully efficient") {
    const ScoreCard card = overall_efficiency(kBayes, weights);
    CHECK(card.efficiency == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(card.win + card.loss == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a coin flip wins exactly half the time") {
    const ScoreCard card = overall_efficiency(kCoinFlip, weights);
    CHECK(card.win == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("the Bayesian win rate sits near the published 70%") {
    double oracle = 0.0;
    for (double prior : kPriors) {
      for (int d = 0; d <= kCalifornia.draws; ++d) {
        const double m = prior * binomial_pmf(d, kCalifornia.draws, kCalifornia.p_a) +
                         (1 - prior) * binomial_pmf(d, kCalifornia.draws, kCalifornia.p_b);
        const double pi = bayes_posterior(Trial{prior, d, kCalifornia}).pi_a;
        oracle += std::max(pi, 1.0 - pi) * m / 3.0;
      }
    }
    const ScoreCard card = overall_efficiency(kBayes, weights);
    CHECK(card.win == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(std::abs(card.win - 0.70) < 0.03);
  }
  SUBCASE("invalid weights are rejected") {
    DesignWeights bad = california_weights();
    bad.cells[0].weight = 0.9;
    CHECK_THROWS_AS(overall_efficiency(kBayes, bad), std::domain_error);
  }
}

TEST_CASE("subject scores") {
  SUBCASE("perfect Bayesian choices score one on both metrics") {
    Dataset data;
    Subject subject;
    subject.id = "perfect";
    for (double prior : kPriors)
      for (int d = 0; d <= kCalifornia.draws; ++d) {
        const Trial t{prior, d, kCalifornia};
        subject.trials.push_back(t);
        subject.choices.push_back(bayes_choice(t) == Cage::A ? 1 : 0);
      }
    data.subjects.push_back(subject);
    const ScoreCard card = subject_scores(data);
    CHECK(card.subject_accuracy[0] == 1.0);
    CHECK(card.subject_efficiency[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("single wrong choice at posterior 0.8") {
    // zero-draw design pins the posterior to the prior
    Dataset data;
    data.subjects.push_back(Subject{"w", {Trial{0.8, 0, Design{0.5, 0.5, 0}}}, {0}});
    const ScoreCard card = subject_scores(data);
    CHECK(card.subject_accuracy[0] == 0.0);
    CHECK(card.subject_efficiency[0] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("efficiency never exceeds one") {
    SimSpec spec;
    spec.schedule = repeated_schedule(kCalifornia, kPriors, 12);
    spec.model = {{StructuralLogitParams{{0.3, 0.7, 1.4}, 0.5, 0}}, {1.0}};
    spec.subjects = 50;
    spec.seed = 31;
    const ScoreCard card = subject_scores(simulate_choice_panel(spec).data);
    for (double omega : card.subject_efficiency) CHECK(omega <= 1.0 + 1e-12);
  }
  SUBCASE("a subject without trials is an error") {
    Dataset data;
    data.subjects.push_back(Subject{"empty", {}, {}});
    CHECK_THROWS_AS(subject_scores(data), std::domain_error);
  }
}

TEST_CASE("simulated near-Bayesian subjects are almost perfectly accurate") {
  SimSpec spec;
  spec.schedule = repeated_schedule(kCalifornia, kPriors, 12);
  spec.model = {{StructuralLogitParams{{0, 1, 1}, 1e-4, 0}}, {1.0}};
  spec.subjects = 300;
  spec.seed = 37;
  const ScoreCard card = subject_scores(simulate_choice_panel(spec).data);
  CHECK(card.accuracy > 0.999);
}

TEST_CASE("uniform design weights deduplicate cells") {
  SimSpec spec;
  spec.schedule = repeated_schedule(kCalifornia, kPriors, 9);
  spec.model = {{kBayes}, {1.0}};
  spec.subjects = 4;
  spec.seed = 3;
  const DesignWeights weights = uniform_design_weights(simulate_choice_panel(spec).data);
  CHECK(weights.cells.size() == 3);
  for (const auto& cell : weights.cells) CHECK(cell.weight == doctest::Approx(1.0 / 3.0));
}
