#pragma once

// The four batch commands behind the latmark executable. Each reads a run
// configuration (and data / estimates where needed) and writes plain CSV or
// JSON files into an output directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <gsl/gsl_cdf.h>
#include <nlohmann/json.hpp>

#include "latmark/config.hpp"
#include "latmark/csv.hpp"
#include "latmark/fit.hpp"
#include "latmark/forward.hpp"
#include "latmark/model.hpp"
#include "latmark/parallel.hpp"
#include "latmark/simulate.hpp"

namespace latmark {

using Json = nlohmann::ordered_json;

struct CommandOptions {
  std::string config;
  std::string data;
  std::string out = ".";
  std::string estimates;
  std::optional<std::uint64_t> seed;
  std::optional<double> level;
  int threads = 1;
  bool per_id = false;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitNotConverged = 2;

namespace detail {

inline std::filesystem::path output_path(const CommandOptions& o, const std::string& file) {
  std::filesystem::create_directories(o.out);
  return std::filesystem::path(o.out) / file;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) invalid(path.string() + ": cannot write file");
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) invalid(path + ": cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    invalid(path + ": " + e.what());
  }
}

inline Dataset load_data(const RunConfig& c, const std::string& path) {
  if (path.empty()) invalid("this command needs --data");
  return build_dataset(read_csv_file(path), c.layout, c.spec.cls);
}

inline Json fit_to_json(const FitResult& r, double level, const std::string& id, bool with_id) {
  Json j;
  if (with_id) j["id"] = id;
  j["model"] = class_name(r.spec.cls);
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["method"] = r.method;
  j["loglik"] = r.loglik;
  j["aic"] = r.aic();
  j["bic"] = r.bic();
  j["n_params"] = r.n_params();
  j["n_obs"] = r.n_obs;
  j["gradient_norm"] = r.gradient_norm;
  if (is_grid_class(r.spec.cls)) {
    j["grid"] = {{"m", r.spec.grid_m}, {"lower", *r.spec.grid_lower}, {"upper", *r.spec.grid_upper}};
  }
  Json est = Json::object(), fixed = Json::array(), iv = Json::object();
  for (std::size_t i = 0; i < r.blocks.size(); ++i) {
    const auto& b = r.blocks[i];
    for (std::size_t k = 0; k < b.labels.size(); ++k) {
      est[b.labels[k]] = b.values[k];
      if (b.fixed) fixed.push_back(b.labels[k]);
      if (!r.intervals.empty() && r.intervals[i][k]) iv[b.labels[k]] = {r.intervals[i][k]->lower, r.intervals[i][k]->upper};
    }
  }
  j["estimates"] = est;
  j["fixed"] = fixed;
  j["level"] = level;
  j["intervals"] = nullptr;
  if (r.covariance) j["intervals"] = iv;
  j["working_labels"] = free_labels(r.blocks);
  j["working"] = std::vector<double>(r.working.data(), r.working.data() + r.working.size());
  if (r.covariance) {
    Json cov = Json::array();
    for (Eigen::Index a = 0; a < r.covariance->rows(); ++a) {
      std::vector<double> row(static_cast<std::size_t>(r.covariance->cols()));
      for (Eigen::Index b = 0; b < r.covariance->cols(); ++b) row[static_cast<std::size_t>(b)] = (*r.covariance)(a, b);
      cov.push_back(row);
    }
    j["covariance"] = cov;
  } else {
    j["covariance"] = nullptr;
  }
  j["trace"] = r.trace;
  return j;
}

// Estimates for one id from a fit.json: the single fit, or the matching
// entry of a per-id file.
inline const Json& estimates_for(const Json& fit, const std::string& id, const std::string& path) {
  if (!fit.contains("fits")) return fit;
  for (const auto& f : fit["fits"])
    if (f.value("id", "") == id) return f;
  invalid(path + ": no fit for id '" + id + "'");
}

// The configured model with the parameter values of a fit.json entry.
inline std::pair<ModelSpec, Params> apply_estimates(const RunConfig& c, const Json& fit, const std::string& path) {
  ModelSpec spec = c.spec;
  if (fit.value("model", "") != class_name(spec.cls)) invalid(path + ": estimates are for a different model class");
  if (is_grid_class(spec.cls)) {
    if (!fit.contains("grid")) invalid(path + ": missing 'grid'");
    spec.grid_m = fit["grid"]["m"].get<int>();
    spec.grid_lower = fit["grid"]["lower"].get<double>();
    spec.grid_upper = fit["grid"]["upper"].get<double>();
  }
  auto blocks = describe(spec, c.init);
  if (!fit.contains("estimates") || !fit["estimates"].is_object()) invalid(path + ": missing 'estimates'");
  const Json& est = fit["estimates"];
  for (auto& b : blocks)
    for (std::size_t k = 0; k < b.labels.size(); ++k) {
      if (!est.contains(b.labels[k]) || !est[b.labels[k]].is_number()) invalid(path + ": missing estimate '" + b.labels[k] + "'");
      b.values[k] = est[b.labels[k]].get<double>();
    }
  Params p = assemble(spec, c.init, blocks);
  validate(spec, p);
  return {spec, p};
}

}  // namespace detail

// ---- fit ----------------------------------------------------------------------

inline int cmd_fit(const CommandOptions& o, std::ostream& log = std::clog) {
  const RunConfig c = load_config(o.config);
  const Dataset data = detail::load_data(c, o.data);
  FitOptions opt = c.fit;
  opt.threads = o.threads;
  if (o.level) opt.level = *o.level;

  bool all_converged = true;
  Json out;
  auto to_json = [&](const FitResult& r, const std::string& id, bool with_id) {
    return detail::fit_to_json(r, opt.level, id, with_id);
  };
  if (o.per_id) {
    std::vector<FitResult> fits(data.size());
    FitOptions each = opt;
    each.threads = 1;
    parallel_for(data.size(), o.threads, [&](std::size_t k) { fits[k] = fit_mle(c.spec, {data[k]}, c.init, each); });
    out["fits"] = Json::array();
    for (std::size_t k = 0; k < data.size(); ++k) {
      all_converged = all_converged && fits[k].converged;
      out["fits"].push_back(to_json(fits[k], data[k].id, true));
      log << "id " << data[k].id << ": loglik " << fits[k].loglik << (fits[k].converged ? "" : " (not converged)") << '\n';
    }
  } else {
    const FitResult r = fit_mle(c.spec, data, c.init, opt);
    all_converged = r.converged;
    out = to_json(r, "", false);
    log << "loglik " << r.loglik << (r.converged ? "" : " (not converged)") << '\n';
  }
  detail::write_json(detail::output_path(o, "fit.json"), out);
  return all_converged ? kExitOk : kExitNotConverged;
}

// ---- simulate -------------------------------------------------------------------

inline int cmd_simulate(const CommandOptions& o, std::ostream& log = std::clog) {
  const RunConfig c = load_config(o.config);
  const auto& so = c.simulate;
  const std::uint64_t seed = o.seed.value_or(so.seed);
  const auto& L = c.layout;
  const bool timed = is_continuous_time(c.spec.cls);
  if (timed && L.time_column.empty()) detail::invalid(c.source + ": simulating a continuous-time model needs [data] time");

  // Designs come from --data when given (times, covariates), else from [simulate].
  std::vector<SimDesign> designs;
  std::vector<std::string> ids;
  Dataset given;
  if (!o.data.empty()) {
    given = detail::load_data(c, o.data);
    for (const auto& s : given) {
      SimDesign d;
      d.length = s.length();
      d.times = s.times;
      d.horizon = s.times.empty() ? 0.0 : s.times.back();
      d.design = s.design;
      for (const auto& x : s.obs) d.covariates.push_back(x.covariates);
      if (is_point_process(c.spec.cls)) d.times.clear();
      d.stop_when_absorbed = so.stop_when_absorbed;
      designs.push_back(d);
      ids.push_back(s.id);
    }
  } else {
    if (!L.covariate_columns.empty() || !L.tpm_covariates.empty()) {
      detail::invalid(c.source + ": models with covariates simulate on the design given by --data");
    }
    if (so.ids > 1 && L.id_column.empty()) detail::invalid(c.source + ": simulate.ids > 1 needs [data] id");
    for (std::size_t k = 0; k < so.ids; ++k) {
      SimDesign d;
      d.length = so.length;
      d.horizon = so.horizon;
      d.visit_rate = so.visit_rate;
      d.stop_when_absorbed = so.stop_when_absorbed;
      if (!timed && d.length == 0) detail::invalid(c.source + ": [simulate] needs 'length'");
      if (timed && !(d.horizon > 0.0)) detail::invalid(c.source + ": [simulate] needs 'horizon'");
      designs.push_back(d);
      ids.push_back(so.ids > 1 ? std::to_string(k + 1) : std::string("1"));
    }
  }

  Table data, truth;
  data.source = truth.source = "simulate";
  if (!L.id_column.empty()) data.header.push_back(L.id_column), truth.header.push_back(L.id_column);
  if (!L.time_column.empty()) data.header.push_back(L.time_column), truth.header.push_back(L.time_column);
  for (const auto& v : L.value_columns) data.header.push_back(v);
  for (const auto& v : L.covariate_columns) data.header.push_back(v);
  for (const auto& v : L.tpm_covariates)
    if (std::find(data.header.begin(), data.header.end(), v) == data.header.end()) data.header.push_back(v);
  truth.header.push_back("state");
  if (is_grid_class(c.spec.cls)) truth.header.push_back("latent");

  std::vector<SimResult> sims(designs.size());
  for (std::size_t k = 0; k < designs.size(); ++k) {
    Rng rng = make_stream(seed, k);
    sims[k] = simulate_sequence(c.spec, c.init, designs[k], rng);
  }
  for (std::size_t k = 0; k < sims.size(); ++k) {
    const auto& r = sims[k];
    for (std::size_t t = 0; t < r.seq.length(); ++t) {
      std::vector<std::string> row, trow;
      if (!L.id_column.empty()) row.push_back(ids[k]), trow.push_back(ids[k]);
      if (!L.time_column.empty()) {
        const auto& given_times = designs[k].times;
        const std::string time = !r.seq.times.empty()    ? format_double(r.seq.times[t])
                                 : !given_times.empty() ? format_double(given_times[t])
                                                        : std::to_string(t + 1);
        row.push_back(time);
        trow.push_back(time);
      }
      for (double v : r.seq.obs[t].values) row.push_back(format_double(v));
      for (double v : r.seq.obs[t].covariates) row.push_back(format_double(v));
      if (!L.tpm_covariates.empty()) {
        for (std::size_t p = 0; p < L.tpm_covariates.size(); ++p) {
          if (std::find(L.covariate_columns.begin(), L.covariate_columns.end(), L.tpm_covariates[p]) != L.covariate_columns.end()) continue;
          row.push_back(format_double(designs[k].design(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p) + 1)));
        }
      }
      trow.push_back(std::to_string(r.states[t] + 1));
      if (is_grid_class(c.spec.cls)) trow.push_back(format_double(r.latent[t]));
      data.rows.push_back(std::move(row));
      truth.rows.push_back(std::move(trow));
    }
    log << "sequence " << ids[k] << ": " << r.seq.length() << " records\n";
  }
  write_csv_file(detail::output_path(o, "data.csv").string(), data);
  write_csv_file(detail::output_path(o, "truth.csv").string(), truth);
  return kExitOk;
}

// ---- decode -----------------------------------------------------------------------

inline int cmd_decode(const CommandOptions& o, std::ostream& log = std::clog) {
  const RunConfig c = load_config(o.config);
  Table table = read_csv_file(o.data);
  const Dataset data = build_dataset(table, c.layout, c.spec.cls);
  if (o.estimates.empty()) detail::invalid("decode needs --estimates");
  const Json fit = detail::read_json(o.estimates);

  const bool grid = is_grid_class(c.spec.cls);
  bool sv = false;
  for (const auto& comp : c.init.emissions.components) sv = sv || family_of(comp.at(0)) == Family::sv_normal;
  std::vector<std::string> added{grid ? "decoded_value" : "decoded_state"};
  if (sv) added.push_back("decoded_volatility");
  for (const auto& a : added) {
    if (table.find(a)) detail::invalid(o.data + ": already has a column named '" + a + "'");
    table.header.push_back(a);
  }
  for (auto& row : table.rows) row.resize(table.header.size());

  Json summary;
  summary["loglik"] = 0.0;
  summary["sequences"] = Json::array();
  double total = 0.0;
  for (const auto& s : data) {
    const auto [spec, p] = detail::apply_estimates(c, detail::estimates_for(fit, s.id, o.estimates), o.estimates);
    const Evaluator ev(spec, p);
    const double ll = ev.log_likelihood(s);
    const DecodeResult d = ev.decode(s);
    total += ll;
    summary["sequences"].push_back({{"id", s.id}, {"loglik", ll}, {"log_joint", d.log_joint}});
    const std::size_t base = table.header.size() - added.size();
    for (std::size_t t = 0; t < s.length(); ++t) {
      auto& row = table.rows[s.rows[t]];
      const auto j = static_cast<std::size_t>(d.states[t]);
      if (grid) {
        const double g = ev.state_values()[j];
        row[base] = format_double(g);
        if (sv) row[base + 1] = format_double(std::exp(g / 2.0));
      } else {
        row[base] = std::to_string(j + 1);
      }
    }
  }
  summary["loglik"] = total;
  write_csv_file(detail::output_path(o, "decoded.csv").string(), table);
  detail::write_json(detail::output_path(o, "decode.json"), summary);
  log << "loglik " << total << '\n';
  return kExitOk;
}

// ---- forecast ---------------------------------------------------------------------

namespace detail {

inline bool continuous_family(Family f) {
  return f == Family::normal || f == Family::gamma || f == Family::von_mises || f == Family::sv_normal;
}

// Component CDF where a closed form exists.
inline double component_cdf(const EmissionComponent& c, std::size_t j, double state_value, double cov, double x) {
  const Distribution& d = c.at(j);
  if (const auto* n = std::get_if<Normal>(&d)) {
    const double mean = n->mean + n->slope * cov + (c.state_in_mean ? state_value : 0.0);
    return gsl_cdf_gaussian_P(x - mean, n->sd);
  }
  if (const auto* s = std::get_if<SvNormal>(&d)) return gsl_cdf_gaussian_P(x - s->mu, s->beta * std::exp(0.5 * state_value));
  if (const auto* g = std::get_if<GammaDist>(&d)) return x <= 0.0 ? 0.0 : gsl_cdf_gamma_P(x, g->shape, g->scale);
  invalid(std::string("rolling forecasts need a closed-form CDF; family '") + family_name(family_of(d)) + "' has none");
}

// Lower `level` quantile of sum_j w_j F_j, by bisection.
inline double mixture_quantile(const EmissionComponent& c, const RowVector& w, std::span<const double> values, double cov,
                               double level, double lo, double hi) {
  auto cdf = [&](double x) {
    double f = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (w(j) > 0.0) f += w(j) * component_cdf(c, static_cast<std::size_t>(j), values[static_cast<std::size_t>(j)], cov, x);
    return f;
  };
  double width = hi - lo;
  for (int k = 0; k < 200 && cdf(lo) > level; ++k) lo -= width, width *= 2.0;
  width = hi - lo;
  for (int k = 0; k < 200 && cdf(hi) < level; ++k) hi += width, width *= 2.0;
  for (int k = 0; k < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++k) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < level ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline int cmd_forecast(const CommandOptions& o, std::ostream& log = std::clog) {
  const RunConfig c = load_config(o.config);
  const Dataset data = detail::load_data(c, o.data);
  if (o.estimates.empty()) detail::invalid("forecast needs --estimates");
  const Json fit = detail::read_json(o.estimates);
  const auto& fo = c.forecast;
  const double level = o.level.value_or(fo.level);
  if (!(level > 0.0 && level < 1.0)) detail::invalid("--level must be in (0, 1)");
  if (is_point_process(c.spec.cls)) detail::invalid("forecast is defined for snapshot models, not point processes");

  const auto& comps = c.init.emissions.components;
  const std::size_t k = 0;
  const Family fam = family_of(comps[k].at(0));
  if (!detail::continuous_family(fam)) {
    detail::invalid(std::string("forecast needs a continuous first emission component; '") + comps[k].name + "' is " + family_name(fam));
  }

  // evaluation range: configured, or the observed range widened by half its width
  double lo = 0.0, hi = 0.0;
  if (fam == Family::von_mises) {
    lo = -std::numbers::pi;
    hi = std::numbers::pi;
  } else {
    double mn = INFINITY, mx = -INFINITY;
    for (const auto& s : data)
      for (const auto& x : s.obs)
        if (!x.missing(k)) mn = std::min(mn, x.values[k]), mx = std::max(mx, x.values[k]);
    if (!std::isfinite(mn)) detail::invalid(o.data + ": no observed values for '" + comps[k].name + "'");
    const double pad = mx > mn ? 0.5 * (mx - mn) : 1.0;
    lo = mn - pad;
    hi = mx + pad;
    if (fam == Family::gamma) lo = std::max(lo, 1e-9 * hi);
  }
  if (fo.lower) lo = *fo.lower;
  if (fo.upper) hi = *fo.upper;
  if (!(lo < hi)) detail::invalid(c.source + ": forecast range is empty");
  std::vector<double> points(fo.points);
  for (std::size_t i = 0; i < fo.points; ++i) points[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(fo.points - 1);

  Table grid_out, backtest;
  grid_out.source = backtest.source = "forecast";
  const bool with_id = !c.layout.id_column.empty();
  if (with_id) grid_out.header.push_back(c.layout.id_column), backtest.header.push_back(c.layout.id_column);
  grid_out.header.insert(grid_out.header.end(), {"x", "density", "weight"});
  backtest.header.insert(backtest.header.end(), {"row", "var", "observed", "exceeded"});

  Json summary;
  summary["level"] = level;
  summary["component"] = comps[k].name;
  summary["forecasts"] = Json::array();
  std::size_t exceed_total = 0, tested_total = 0;

  for (const auto& s : data) {
    const auto [spec, p] = detail::apply_estimates(c, detail::estimates_for(fit, s.id, o.estimates), o.estimates);
    const Evaluator ev(spec, p);
    const auto& comp = p.emissions.components[k];
    const auto values = ev.state_values();
    auto state_density = [&](const std::vector<double>& cov) {
      const double z = comp.covariate ? cov.at(*comp.covariate) : 0.0;
      return [&, z](std::size_t j, double x) { return density(comp.at(j), x, values[j], z, comp.state_in_mean); };
    };

    // one step beyond the last record
    const ForwardFilter f = ev.filter(s, s.length());
    const RowVector w = f.predict(ev.next_omega(s, fo.dt));
    const Forecast fc = forecast(w, points, state_density(s.obs.back().covariates));
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::vector<std::string> row;
      if (with_id) row.push_back(s.id);
      row.insert(row.end(), {format_double(points[i]), format_double(fc.density[i]), format_double(fc.weights[i])});
      grid_out.rows.push_back(std::move(row));
    }
    Json entry{{"id", s.id}, {"quantile", fc.quantile(level)}};

    // rolling one-step-ahead quantiles over the last `holdout` records
    if (fo.holdout > 0) {
      if (fo.holdout >= s.length()) detail::invalid(c.source + ": forecast.holdout must be shorter than sequence '" + s.id + "'");
      const std::size_t start = s.length() - fo.holdout;
      ForwardFilter roll = ev.filter(s, start);
      std::size_t exceed = 0, tested = 0;
      for (std::size_t t = start; t < s.length(); ++t) {
        const Matrix om = ev.omega(s, t);
        const RowVector wt = roll.predict(om);
        const auto& x = s.obs[t];
        const double z = comp.covariate ? x.covariates.at(*comp.covariate) : 0.0;
        const double var = detail::mixture_quantile(comp, wt, values, z, level, lo, hi);
        std::vector<std::string> row;
        if (with_id) row.push_back(s.id);
        row.push_back(std::to_string(s.rows[t] + 1));
        row.push_back(format_double(var));
        if (x.missing(k)) {
          row.insert(row.end(), {"", ""});
        } else {
          const bool hit = x.values[k] < var;
          exceed += hit;
          ++tested;
          row.insert(row.end(), {format_double(x.values[k]), hit ? "1" : "0"});
        }
        backtest.rows.push_back(std::move(row));
        roll.advance(om, ev.pdiag(s, t));
      }
      entry["backtest"] = {{"holdout", fo.holdout},
                           {"tested", tested},
                           {"exceedances", exceed},
                           {"frequency", tested ? static_cast<double>(exceed) / static_cast<double>(tested) : 0.0}};
      exceed_total += exceed;
      tested_total += tested;
    }
    summary["forecasts"].push_back(entry);
    log << "id " << s.id << ": " << level << " quantile " << fc.quantile(level) << '\n';
  }
  if (fo.holdout > 0) {
    summary["backtest"] = {{"tested", tested_total},
                           {"exceedances", exceed_total},
                           {"frequency", tested_total ? static_cast<double>(exceed_total) / static_cast<double>(tested_total) : 0.0}};
    write_csv_file(detail::output_path(o, "backtest.csv").string(), backtest);
    log << "backtest: " << exceed_total << " exceedances in " << tested_total << '\n';
  } else {
    summary["backtest"] = nullptr;
  }
  write_csv_file(detail::output_path(o, "forecast.csv").string(), grid_out);
  detail::write_json(detail::output_path(o, "var.json"), summary);
  return kExitOk;
}

}  // namespace latmark
