#include <doctest.h>

#include <stdexcept>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "cages/io.hpp"
#include "cages/simulate.hpp"

using namespace cages;

namespace {
namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cages_io_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_text(const TempDir& dir, const std::string& name, const std::string& text) {
  const std::string path = dir.file(name);
  std::ofstream out(path);
  out << text;
  return path;
}

const std::string kHeader = "subject_id,trial_id,p_a,p_b,draws,marked,prior,choice\n";
}  // namespace

TEST_CASE("choice dataset roundtrip is the identity") {
  TempDir dir;
  SimSpec spec;
  spec.schedule = repeated_schedule(Design{2.0 / 3.0, 0.5, 6},
                                    std::vector<double>{1.0 / 3.0, 0.5, 2.0 / 3.0}, 9);
  spec.model = {{StructuralLogitParams{{0, 1, 1}, 0.3, 0}}, {1.0}};
  spec.subjects = 7;
  spec.seed = 99;
  const Dataset data = simulate_choice_panel(spec).data;

  const std::string path = dir.file("roundtrip.csv");
  write_choice_dataset(data, path);
  const Dataset loaded = load_choice_dataset(path);

  REQUIRE(loaded.subjects.size() == data.subjects.size());
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    CHECK(loaded.subjects[s].id == data.subjects[s].id);
    CHECK(loaded.subjects[s].choices == data.subjects[s].choices);
    for (std::size_t t = 0; t < data.subjects[s].trials.size(); ++t) {
      // doubles survive exactly through the shortest round-trip format
      CHECK(loaded.subjects[s].trials[t].prior == data.subjects[s].trials[t].prior);
      CHECK(loaded.subjects[s].trials[t].design.p_a == data.subjects[s].trials[t].design.p_a);
      CHECK(loaded.subjects[s].trials[t].marked == data.subjects[s].trials[t].marked);
    }
  }

  // rewriting the loaded data reproduces the file byte for byte
  const std::string again = dir.file("again.csv");
  write_choice_dataset(loaded, again);
  std::ifstream f1(path), f2(again);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("the grading benchmark row parses and reproduces 9/13") {
  TempDir dir;
  const std::string path =
      write_text(dir, "bench.csv", kHeader + "s1,1,0.4,0.6,7,3,0.6,1\n");
  const Dataset data = load_choice_dataset(path);
  REQUIRE(data.subjects.size() == 1);
  CHECK(bayes_posterior(data.subjects[0].trials[0]).pi_a ==
        doctest::Approx(9.0 / 13.0).epsilon(1e-9));
}

TEST_CASE("malformed files are rejected with row and column context") {
  TempDir dir;
  const auto rejects = [&](const std::string& name, const std::string& text) {
    const std::string path = write_text(dir, name, text);
    CHECK_THROWS_AS(load_choice_dataset(path), ParseError);
  };

  // 1. missing required column
  rejects("m1.csv", "subject_id,trial_id,p_a,p_b,draws,marked,choice\ns,1,0.5,0.4,3,1,1\n");
  // 2. unknown column
  rejects("m2.csv",
          "subject_id,trial_id,p_a,p_b,draws,marked,prior,choice,extra\ns,1,0.5,0.4,3,1,0.5,1,9\n");
  // 3. non-numeric field
  rejects("m3.csv", kHeader + "s,1,0.5,0.4,3,one,0.5,1\n");
  // 4. probability out of range
  rejects("m4.csv", kHeader + "s,1,1.5,0.4,3,1,0.5,1\n");
  // 5. prior out of range
  rejects("m5.csv", kHeader + "s,1,0.5,0.4,3,1,1.5,1\n");
  // 6. negative draw count
  rejects("m6.csv", kHeader + "s,1,0.5,0.4,-3,1,0.5,1\n");
  // 7. marked exceeds draws
  rejects("m7.csv", kHeader + "s,1,0.5,0.4,6,7,0.5,1\n");
  // 8. negative marked count
  rejects("m8.csv", kHeader + "s,1,0.5,0.4,6,-1,0.5,1\n");
  // 9. choice outside {0,1}
  rejects("m9.csv", kHeader + "s,1,0.5,0.4,6,3,0.5,2\n");
  // 10. mixed modes: report column under choice mode
  rejects("m10.csv", "subject_id,trial_id,p_a,p_b,draws,marked,prior,report\ns,1,0.5,0.4,6,3,0.5,0.7\n");
  // 11. ragged row
  rejects("m11.csv", kHeader + "s,1,0.5,0.4,6,3,0.5\n");
  // 12. empty file / missing header
  rejects("m12.csv", "");
  // plus: header only, no data rows
  rejects("m13.csv", kHeader);
  // error messages carry the offending row and column
  try {
    load_choice_dataset(write_text(dir, "msg.csv", kHeader + "s,1,0.5,0.4,6,7,0.5,1\n"));
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    const std::string what = e.what();
    CHECK(what.find(":2") != std::string::npos);
    CHECK(what.find("marked") != std::string::npos);
  }
}

TEST_CASE("report mode") {
  TempDir dir;
  const std::string path = write_text(
      dir, "rep.csv",
      "subject_id,trial_id,p_a,p_b,draws,marked,prior,report\ns,1,0.4,0.6,7,3,0.6,0.25\n");
  const auto reports = load_report_dataset(path);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].report == 0.25);
  // report out of range
  const std::string bad = write_text(
      dir, "repbad.csv",
      "subject_id,trial_id,p_a,p_b,draws,marked,prior,report\ns,1,0.4,0.6,7,3,0.6,1.25\n");
  CHECK_THROWS_AS(load_report_dataset(bad), ParseError);

  // roundtrip through the writer
  const std::string out = dir.file("repout.csv");
  write_report_dataset(reports, out);
  const auto again = load_report_dataset(out);
  CHECK(again[0].report == reports[0].report);
  CHECK(again[0].trial.prior == reports[0].trial.prior);
}

TEST_CASE("endpoint priors load but cannot be fitted") {
  TempDir dir;
  const std::string path =
      write_text(dir, "endpoint.csv", kHeader + "s,1,0.6,0.4,3,1,0,0\ns,2,0.6,0.4,3,1,0.5,1\n" +
                                          "s,3,0.6,0.4,3,2,0.5,1\ns,4,0.6,0.4,3,0,0.5,0\n");
  const Dataset data = load_choice_dataset(path);
  CHECK(data.subjects[0].trials[0].prior == 0.0);
  FitConfig cfg;
  CHECK_THROWS_AS(fit_mle(Family::noisy_bayes, data, cfg), std::invalid_argument);
}

TEST_CASE("fit results JSON roundtrip preserves every numeric field") {
  TempDir dir;
  SimSpec spec;
  spec.schedule = repeated_schedule(Design{2.0 / 3.0, 0.5, 6},
                                    std::vector<double>{1.0 / 3.0, 0.5, 2.0 / 3.0}, 12);
  spec.model = {{StructuralLogitParams{{0, 1, 1}, 0.35, 0}}, {1.0}};
  spec.subjects = 25;
  spec.seed = 3;
  const Dataset data = simulate_choice_panel(spec).data;
  FitConfig cfg;
  cfg.restarts = 2;
  const FitResult fit = fit_mle(Family::structural_logit, data, cfg);

  const std::string path = dir.file("fit.json");
  write_fit_json(fit, path);
  const FitResult loaded = read_fit_json(path);

  CHECK(loaded.family == fit.family);
  CHECK(loaded.loglik == fit.loglik);
  CHECK(loaded.aic == fit.aic);
  CHECK(loaded.n_params == fit.n_params);
  CHECK(loaded.aic == aic(loaded.n_params, loaded.loglik));
  CHECK(natural_params(loaded.family, loaded.thetas[0]) ==
        natural_params(fit.family, fit.thetas[0]));
  CHECK(loaded.std_errors == fit.std_errors);
  CHECK(loaded.lambdas == fit.lambdas);
  CHECK(loaded.covariance.data == fit.covariance.data);

  // cutoff parameters use their own exact representation
  const FitResult cut = fit_mle(Family::cutoff_rule, data, cfg);
  const std::string cut_path = dir.file("cutoff.json");
  write_fit_json(cut, cut_path);
  const FitResult cut_loaded = read_fit_json(cut_path);
  CHECK(std::get<CutoffParams>(cut_loaded.thetas[0]).cutoffs ==
        std::get<CutoffParams>(cut.thetas[0]).cutoffs);
  CHECK(std::get<CutoffParams>(cut_loaded.thetas[0]).epsilon ==
        std::get<CutoffParams>(cut.thetas[0]).epsilon);
}

TEST_CASE("mixture results carry lambda summing to one") {
  SimSpec spec;
  spec.schedule = repeated_schedule(Design{2.0 / 3.0, 0.5, 6},
                                    std::vector<double>{1.0 / 3.0, 0.5, 2.0 / 3.0}, 15);
  spec.model = {{StructuralLogitParams{{0, 1, 1}, 0.05, 0},
                 StructuralLogitParams{{0, 2, 0.5}, 0.25, 0}},
                {0.5, 0.5}};
  spec.subjects = 40;
  spec.seed = 8;
  FitConfig cfg;
  cfg.restarts = 2;
  const Dataset data = simulate_choice_panel(spec).data;
  const FitResult em = fit_mixture_em(Family::noisy_bayes, 2, data, cfg);
  const auto j = fit_to_json(em);
  double sum = 0.0;
  for (const auto& l : j.at("lambda")) sum += l.get<double>();
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(j.at("estimates").size() == 2);
  CHECK(j.contains("tests"));
}

TEST_CASE("loss curve CSV format") {
  TempDir dir;
  const std::vector<LossPoint> curve = {{0.25, 0.125}, {0.5, 0.3}};
  const std::string path = dir.file("curve.csv");
  write_loss_curve_csv(curve, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "prior,loss");
  std::getline(in, line);
  CHECK(line == "0.25,0.125");
}

TEST_CASE("unwritable paths raise io errors") {
  const Dataset tiny{{Subject{"s", {Trial{0.5, 1, Design{0.6, 0.4, 2}}}, {1}}}};
  CHECK_THROWS_AS(write_choice_dataset(tiny, "/nonexistent_dir/x.csv"), std::runtime_error);
}
