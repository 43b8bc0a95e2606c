#include "cages/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace cages {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

[[noreturn]] void fail(const std::string& path, int row, const std::string& column,
                       const std::string& what) {
  std::string msg = path + ":" + std::to_string(row);
  if (!column.empty()) msg += ": column '" + column + "'";
  throw ParseError(msg + ": " + what);
}

double parse_double(const std::string& field, const std::string& path, int row,
                    const std::string& column) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) fail(path, row, column, "not a number: '" + field + "'");
  return value;
}

long parse_int(const std::string& field, const std::string& path, int row,
               const std::string& column) {
  long value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) fail(path, row, column, "not an integer: '" + field + "'");
  return value;
}

struct CsvTable {
  std::map<std::string, int> columns;
  std::vector<std::vector<std::string>> rows;  // data rows; row i is file line i+2
};

CsvTable read_table(const std::string& path, const std::string& mode_column) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: empty file, expected a header");

  static const std::vector<std::string> kBase = {"subject_id", "trial_id", "p_a",   "p_b",
                                                 "draws",      "marked",   "prior"};
  CsvTable table;
  const std::vector<std::string> header = split_csv_line(line);
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& name = header[i];
    bool known = name == mode_column;
    for (const auto& base : kBase) known = known || name == base;
    if (!known) {
      const std::string other = mode_column == "choice" ? "report" : "choice";
      if (name == other)
        fail(path, 1, name, "mixed modes: file has a '" + name + "' column but '" + mode_column +
                                "' mode was requested");
      fail(path, 1, name, "unknown column");
    }
    if (table.columns.count(name)) fail(path, 1, name, "duplicate column");
    table.columns[name] = static_cast<int>(i);
  }
  for (const auto& base : kBase)
    if (!table.columns.count(base)) fail(path, 1, base, "missing column");
  if (!table.columns.count(mode_column)) fail(path, 1, mode_column, "missing column");

  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size())
      fail(path, row, "", "expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.rows.empty()) throw ParseError(path + ": no data rows");
  return table;
}

struct ParsedRow {
  std::string subject_id;
  Trial trial;
  double value = 0.0;  // choice or report
};

ParsedRow parse_row(const CsvTable& table, const std::vector<std::string>& fields, int row,
                    const std::string& path, const std::string& mode_column) {
  const auto field = [&](const std::string& name) -> const std::string& {
    return fields[table.columns.at(name)];
  };
  ParsedRow out;
  out.subject_id = field("subject_id");
  if (out.subject_id.empty()) fail(path, row, "subject_id", "empty subject id");
  parse_int(field("trial_id"), path, row, "trial_id");

  out.trial.design.p_a = parse_double(field("p_a"), path, row, "p_a");
  out.trial.design.p_b = parse_double(field("p_b"), path, row, "p_b");
  if (out.trial.design.p_a < 0.0 || out.trial.design.p_a > 1.0)
    fail(path, row, "p_a", "probability outside [0,1]");
  if (out.trial.design.p_b < 0.0 || out.trial.design.p_b > 1.0)
    fail(path, row, "p_b", "probability outside [0,1]");

  const long draws = parse_int(field("draws"), path, row, "draws");
  if (draws < 0 || draws > 10000) fail(path, row, "draws", "out of range");
  out.trial.design.draws = static_cast<int>(draws);

  const long marked = parse_int(field("marked"), path, row, "marked");
  if (marked < 0) fail(path, row, "marked", "negative count");
  if (marked > draws) fail(path, row, "marked", "exceeds draws");
  out.trial.marked = static_cast<int>(marked);

  out.trial.prior = parse_double(field("prior"), path, row, "prior");
  if (out.trial.prior < 0.0 || out.trial.prior > 1.0)
    fail(path, row, "prior", "probability outside [0,1]");

  if (mode_column == "choice") {
    const long y = parse_int(field("choice"), path, row, "choice");
    if (y != 0 && y != 1) fail(path, row, "choice", "must be 0 or 1");
    out.value = static_cast<double>(y);
  } else {
    out.value = parse_double(field("report"), path, row, "report");
    if (out.value < 0.0 || out.value > 1.0) fail(path, row, "report", "probability outside [0,1]");
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

Dataset load_choice_dataset(const std::string& path) {
  const CsvTable table = read_table(path, "choice");
  Dataset data;
  std::map<std::string, int> subject_index;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const int row = static_cast<int>(i) + 2;
    const ParsedRow parsed = parse_row(table, table.rows[i], row, path, "choice");
    auto [it, inserted] =
        subject_index.emplace(parsed.subject_id, static_cast<int>(data.subjects.size()));
    if (inserted) data.subjects.push_back(Subject{parsed.subject_id, {}, {}});
    Subject& subject = data.subjects[it->second];
    subject.trials.push_back(parsed.trial);
    subject.choices.push_back(static_cast<int>(parsed.value));
  }
  return data;
}

std::vector<ReportTrial> load_report_dataset(const std::string& path) {
  const CsvTable table = read_table(path, "report");
  std::vector<ReportTrial> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const int row = static_cast<int>(i) + 2;
    const ParsedRow parsed = parse_row(table, table.rows[i], row, path, "report");
    out.push_back(ReportTrial{parsed.subject_id, parsed.trial, parsed.value});
  }
  return out;
}

void write_choice_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "subject_id,trial_id,p_a,p_b,draws,marked,prior,choice\n";
  for (const auto& subject : data.subjects)
    for (std::size_t t = 0; t < subject.trials.size(); ++t) {
      const Trial& trial = subject.trials[t];
      out << subject.id << ',' << t + 1 << ',' << format_double(trial.design.p_a) << ','
          << format_double(trial.design.p_b) << ',' << trial.design.draws << ',' << trial.marked
          << ',' << format_double(trial.prior) << ',' << subject.choices[t] << '\n';
    }
  if (!out) throw std::runtime_error(path + ": write failed");
}

void write_report_dataset(std::span<const ReportTrial> reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "subject_id,trial_id,p_a,p_b,draws,marked,prior,report\n";
  std::string last_id;
  int trial_id = 0;
  for (const auto& rt : reports) {
    trial_id = rt.subject_id == last_id ? trial_id + 1 : 1;
    last_id = rt.subject_id;
    out << rt.subject_id << ',' << trial_id << ',' << format_double(rt.trial.design.p_a) << ','
        << format_double(rt.trial.design.p_b) << ',' << rt.trial.design.draws << ','
        << rt.trial.marked << ',' << format_double(rt.trial.prior) << ','
        << format_double(rt.report) << '\n';
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

namespace {

ordered_json params_to_json(Family f, const ModelParams& theta) {
  ordered_json j;
  if (f == Family::cutoff_rule) {
    const auto& cp = std::get<CutoffParams>(theta);
    ordered_json cuts = ordered_json::array();
    for (const auto& [prior, c] : cp.cutoffs) cuts.push_back({{"prior", prior}, {"threshold", c}});
    j["cutoffs"] = cuts;
    j["epsilon"] = cp.epsilon;
    return j;
  }
  const std::vector<std::string> names = param_names(f, &theta);
  const std::vector<double> nat = natural_params(f, theta);
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = nat[i];
  return j;
}

ModelParams params_from_json(Family f, const ordered_json& j) {
  if (f == Family::cutoff_rule) {
    CutoffParams cp;
    for (const auto& cut : j.at("cutoffs"))
      cp.cutoffs.emplace_back(cut.at("prior").get<double>(), cut.at("threshold").get<int>());
    cp.epsilon = j.at("epsilon").get<double>();
    return cp;
  }
  const ModelParams probe = default_params(f);
  const std::vector<std::string> names = param_names(f, &probe);
  std::vector<double> nat;
  for (const auto& name : names) nat.push_back(j.at(name).get<double>());
  return params_from_natural(f, nat);
}

ordered_json matrix_to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (int i = 0; i < m.rows; ++i) {
    ordered_json row = ordered_json::array();
    for (int j = 0; j < m.cols; ++j) row.push_back(m.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const ordered_json& j) {
  Matrix m(static_cast<int>(j.size()), j.empty() ? 0 : static_cast<int>(j[0].size()));
  for (int i = 0; i < m.rows; ++i)
    for (int c = 0; c < m.cols; ++c) m.at(i, c) = j[i][c].get<double>();
  return m;
}

}  // namespace

ordered_json fit_to_json(const FitResult& fit) {
  ordered_json j;
  j["model"] = family_name(fit.family);

  ordered_json estimates = ordered_json::array();
  for (const auto& theta : fit.thetas) estimates.push_back(params_to_json(fit.family, theta));
  j["estimates"] = estimates;

  // Per-type standard errors mirror the estimates' layout; lambda errors (for
  // multi-type fits) are appended after the flattened type blocks.
  ordered_json errors = ordered_json::array();
  const int k = static_cast<int>(fit.thetas.size());
  if (fit.family != Family::cutoff_rule) {
    const int p = n_free_params(fit.family, &fit.thetas[0]);
    const std::vector<std::string> names = param_names(fit.family, &fit.thetas[0]);
    for (int t = 0; t < k; ++t) {
      ordered_json per_type;
      for (int i = 0; i < p; ++i) {
        const int flat = t * p + i;
        per_type[names[i]] =
            flat < static_cast<int>(fit.std_errors.size()) ? fit.std_errors[flat] : 0.0;
      }
      errors.push_back(std::move(per_type));
    }
  } else {
    for (int t = 0; t < k; ++t) {
      ordered_json per_type;
      per_type["epsilon"] = fit.std_errors.empty() ? 0.0 : fit.std_errors.back();
      errors.push_back(std::move(per_type));
    }
  }
  j["std_errors"] = errors;

  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["lambda"] = fit.lambdas;
  j["assignments"] = fit.assignments;
  j["tests"] = ordered_json::object();

  ordered_json diag;
  diag["n_params"] = fit.n_params;
  diag["converged"] = fit.converged;
  diag["boundary"] = fit.boundary;
  diag["rank_warning"] = fit.rank_warning;
  diag["dropped_component"] = fit.dropped_component;
  diag["clamp_count"] = fit.clamp_count;
  diag["iterations"] = fit.iterations;
  diag["std_errors_flat"] = fit.std_errors;
  diag["covariance"] = matrix_to_json(fit.covariance);
  j["diagnostics"] = diag;
  return j;
}

FitResult fit_from_json(const ordered_json& j) {
  FitResult fit;
  fit.family = family_from_name(j.at("model").get<std::string>());
  for (const auto& est : j.at("estimates"))
    fit.thetas.push_back(params_from_json(fit.family, est));
  fit.loglik = j.at("loglik").get<double>();
  fit.aic = j.at("aic").get<double>();
  fit.lambdas = j.at("lambda").get<std::vector<double>>();
  fit.assignments = j.at("assignments").get<std::vector<int>>();
  const auto& diag = j.at("diagnostics");
  fit.n_params = diag.at("n_params").get<int>();
  fit.converged = diag.at("converged").get<bool>();
  fit.boundary = diag.at("boundary").get<bool>();
  fit.rank_warning = diag.at("rank_warning").get<bool>();
  fit.dropped_component = diag.at("dropped_component").get<bool>();
  fit.clamp_count = diag.at("clamp_count").get<long>();
  fit.iterations = diag.at("iterations").get<int>();
  fit.std_errors = diag.at("std_errors_flat").get<std::vector<double>>();
  fit.covariance = matrix_from_json(diag.at("covariance"));
  return fit;
}

void write_fit_json(const FitResult& fit, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << fit_to_json(fit).dump(2) << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
}

FitResult read_fit_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  ordered_json j;
  in >> j;
  return fit_from_json(j);
}

ordered_json scorecard_to_json(const ScoreCard& card) {
  ordered_json j;
  j["win"] = card.win;
  j["loss"] = card.loss;
  j["efficiency"] = card.efficiency;
  j["accuracy"] = card.accuracy;
  j["mean_subject_efficiency"] = card.mean_subject_efficiency;
  j["subject_accuracy"] = card.subject_accuracy;
  j["subject_efficiency"] = card.subject_efficiency;
  return j;
}

ordered_json belief_fit_to_json(const BeliefFit& fit) {
  ordered_json j;
  j["model"] = "belief-regression";
  ordered_json est;
  est["beta0"] = fit.beliefs.beta0;
  est["beta1"] = fit.beliefs.beta1;
  est["beta2"] = fit.beliefs.beta2;
  est["eta"] = fit.eta;
  j["estimates"] = est;
  ordered_json se;
  const std::vector<std::string> names = {"beta0", "beta1", "beta2", "eta"};
  for (std::size_t i = 0; i < names.size(); ++i)
    se[names[i]] = i < fit.std_errors.size() ? fit.std_errors[i] : 0.0;
  j["std_errors"] = se;
  if (std::isfinite(fit.loglik))
    j["loglik"] = fit.loglik;
  else
    j["loglik"] = nullptr;  // exact eta = 0 fit
  j["p_lower"] = fit.p_lower;
  j["p_upper"] = fit.p_upper;
  j["n_interior"] = fit.n_interior;
  j["n_censored_low"] = fit.n_censored_low;
  j["n_censored_high"] = fit.n_censored_high;
  j["used_censoring"] = fit.used_censoring;
  j["converged"] = fit.converged;
  return j;
}

void write_loss_curve_csv(std::span<const LossPoint> curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "prior,loss\n";
  for (const auto& point : curve)
    out << format_double(point.prior) << ',' << format_double(point.loss) << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace cages
