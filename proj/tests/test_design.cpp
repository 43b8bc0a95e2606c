#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <limits>

#include "cages/design.hpp"

using namespace cages;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
const Design kCalifornia{2.0 / 3.0, 0.5, 6};   // 6-ball design
const Design kWisconsin{0.4, 0.6, 7};          // reversed 7-ball design
}  // namespace

TEST_CASE("binomial pmf matches the worked fractions") {
  CHECK(binomial_pmf(3, 6, 2.0 / 3.0) == doctest::Approx(160.0 / 729.0).epsilon(1e-12));
  CHECK(binomial_pmf(3, 7, 0.4) == doctest::Approx(4536.0 / 15625.0).epsilon(1e-12));
  CHECK(binomial_pmf(0, 5, 0.3) == doctest::Approx(std::pow(0.7, 5)).epsilon(1e-12));
  CHECK_THROWS_AS(binomial_pmf(7, 6, 0.5), std::domain_error);
  CHECK_THROWS_AS(binomial_pmf(-1, 6, 0.5), std::domain_error);
  CHECK_THROWS_AS(binomial_pmf(1, 6, 1.5), std::domain_error);
}

TEST_CASE("binomial pmf sums to one") {
  for (int draws : {0, 1, 2, 5, 10, 17, 30}) {
    for (double p : {0.0, 0.1, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.9, 1.0}) {
      double sum = 0.0;
      for (int d = 0; d <= draws; ++d) sum += binomial_pmf(d, draws, p);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("llr benchmark values") {
  CHECK(llr(Trial{0.6, 3, kWisconsin}) == doctest::Approx(std::log(1.5)).epsilon(1e-12));
  CHECK(llr(Trial{0.7, 3, kCalifornia}) == doctest::Approx(std::log(512.0 / 729.0)).epsilon(1e-12));
  // identical cages carry no information
  for (int d = 0; d <= 4; ++d) CHECK(llr(Trial{0.5, d, Design{0.3, 0.3, 4}}) == 0.0);
}

TEST_CASE("llr handles degenerate cages with signed infinity") {
  CHECK(llr(Trial{0.5, 1, Design{0.0, 0.5, 2}}) == -kInf);
  CHECK(llr(Trial{0.5, 1, Design{0.5, 0.0, 2}}) == kInf);
  // d = 0 from a p = 0 cage is certain, not impossible
  CHECK(llr(Trial{0.5, 0, Design{0.0, 0.5, 2}}) == doctest::Approx(-2.0 * std::log(0.5)));
  CHECK_THROWS_AS(llr(Trial{0.5, 1, Design{0.0, 0.0, 2}}), std::domain_error);
}

TEST_CASE("lpr endpoints and benchmarks") {
  CHECK(lpr(0.5) == 0.0);
  CHECK(lpr(0.6) == doctest::Approx(std::log(1.5)).epsilon(1e-12));
  CHECK(lpr(0.7) == doctest::Approx(std::log(7.0 / 3.0)).epsilon(1e-12));
  CHECK(lpr(0.0) == -kInf);
  CHECK(lpr(1.0) == kInf);
}

TEST_CASE("bayes posterior reproduces the grading fractions") {
  CHECK(bayes_posterior(Trial{0.6, 3, kWisconsin}).pi_a ==
        doctest::Approx(9.0 / 13.0).epsilon(1e-12));
  CHECK(bayes_posterior(Trial{0.7, 3, kCalifornia}).pi_a ==
        doctest::Approx(3584.0 / 5771.0).epsilon(1e-12));
  CHECK(bayes_posterior(Trial{0.0, 3, kCalifornia}).pi_a == 0.0);
  CHECK(bayes_posterior(Trial{1.0, 3, kCalifornia}).pi_a == 1.0);
  // p_a == p_b returns the prior unchanged
  CHECK(bayes_posterior(Trial{0.37, 2, Design{0.5, 0.5, 4}}).pi_a == doctest::Approx(0.37));
}

TEST_CASE("posterior equals logistic(llr + lpr) where finite") {
  for (double prior : {0.05, 1.0 / 3.0, 0.5, 0.75, 0.95}) {
    for (int d = 0; d <= 6; ++d) {
      const Trial t{prior, d, kCalifornia};
      const PosteriorPair post = bayes_posterior(t);
      CHECK(post.pi_a == doctest::Approx(logistic(post.llr + post.lpr)).epsilon(1e-12));
    }
  }
}

TEST_CASE("posterior is monotone in d and prior when p_a > p_b") {
  double prev = -1.0;
  for (int d = 0; d <= 6; ++d) {
    const double pi = bayes_posterior(Trial{0.4, d, kCalifornia}).pi_a;
    CHECK(pi >= prev);
    prev = pi;
  }
  prev = -1.0;
  for (double prior = 0.0; prior <= 1.0001; prior += 0.05) {
    const double pi = bayes_posterior(Trial{std::min(prior, 1.0), 3, kCalifornia}).pi_a;
    CHECK(pi >= prev);
    prev = pi;
  }
}

TEST_CASE("bayes choice on the worked examples") {
  CHECK(bayes_choice(Trial{0.6, 3, kWisconsin}) == Cage::A);
  // slide example: prior 0.3, posterior ~0.231
  CHECK(bayes_posterior(Trial{0.3, 3, kCalifornia}).pi_a == doctest::Approx(0.231).epsilon(2e-3));
  CHECK(bayes_choice(Trial{0.3, 3, kCalifornia}) == Cage::B);
  // exact tie goes to A: symmetric design, even prior, symmetric sample
  CHECK(bayes_posterior(Trial{0.5, 1, Design{0.6, 0.4, 2}}).pi_a == doctest::Approx(0.5));
  CHECK(bayes_choice(Trial{0.5, 1, Design{0.6, 0.4, 2}}) == Cage::A);
}

TEST_CASE("equal cage rates are legal but flagged uninformative") {
  CHECK_FALSE(informative(Design{0.5, 0.5, 6}));
  CHECK(informative(kCalifornia));
  // the posterior degenerates to the prior, which is still well defined
  CHECK(bayes_posterior(Trial{0.41, 3, Design{0.5, 0.5, 6}}).pi_a == doctest::Approx(0.41));
}

TEST_CASE("bayes cutoffs reproduce the published tables") {
  CHECK(bayes_cutoff(kCalifornia, 1.0 / 3.0) == 4);
  CHECK(bayes_cutoff(kCalifornia, 0.5) == 3);
  CHECK(bayes_cutoff(kCalifornia, 2.0 / 3.0) == 2);

  const int expected[] = {6, 5, 4, 4, 3, 2, 2, 1, 0};
  for (int i = 0; i < 9; ++i) CHECK(bayes_cutoff(kCalifornia, (i + 1) / 10.0) == expected[i]);

  CHECK(bayes_cutoff(kCalifornia, 1.0) == -1);
  CHECK(bayes_cutoff(kCalifornia, 0.0) == 6);
  CHECK_THROWS_AS(bayes_cutoff(Design{0.5, 0.5, 6}, 0.5), std::domain_error);
}

TEST_CASE("cutoff rule reproduces bayes_choice exhaustively, both orientations") {
  for (int draws = 0; draws <= 10; ++draws) {
    for (const Design design : {Design{2.0 / 3.0, 0.5, draws}, Design{0.4, 0.6, draws},
                                Design{0.9, 0.2, draws}}) {
      for (double prior = 0.0; prior <= 1.0001; prior += 0.1) {
        const double p = std::min(prior, 1.0);
        const int c = bayes_cutoff(design, p);
        for (int d = 0; d <= draws; ++d) {
          const bool by_rule = cutoff_chooses_a(design, c, d);
          const bool by_bayes = bayes_choice(Trial{p, d, design}) == Cage::A;
          CHECK(by_rule == by_bayes);
        }
      }
    }
  }
}
