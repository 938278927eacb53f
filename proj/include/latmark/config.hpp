#pragma once

// Run configuration: a flat key = value text file with [section] headers.
// '#' starts a comment. Every diagnostic names the file and line.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "latmark/csv.hpp"
#include "latmark/errors.hpp"
#include "latmark/fit.hpp"
#include "latmark/model.hpp"

namespace latmark {

struct IniEntry {
  std::string value;
  std::size_t line = 0;
};

struct IniSection {
  std::string name;
  std::size_t line = 0;
  std::map<std::string, IniEntry> entries;
};

struct Ini {
  std::string source;
  std::vector<IniSection> sections;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s, const char* seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::string_view(seps).find(c) != std::string_view::npos) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

inline Ini parse_ini(std::istream& in, const std::string& source) {
  Ini ini;
  ini.source = source;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') detail::invalid(detail::where(source, lineno) + "malformed section header");
      const std::string name = detail::trim(line.substr(1, line.size() - 2));
      if (name.empty()) detail::invalid(detail::where(source, lineno) + "empty section name");
      for (const auto& s : ini.sections)
        if (s.name == name) detail::invalid(detail::where(source, lineno) + "duplicate section [" + name + "]");
      ini.sections.push_back({name, lineno, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) detail::invalid(detail::where(source, lineno) + "expected 'key = value'");
    if (ini.sections.empty()) detail::invalid(detail::where(source, lineno) + "key outside of any section");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) detail::invalid(detail::where(source, lineno) + "empty key");
    auto& entries = ini.sections.back().entries;
    if (entries.count(key)) detail::invalid(detail::where(source, lineno) + "duplicate key '" + key + "'");
    entries[key] = {detail::trim(line.substr(eq + 1)), lineno};
  }
  return ini;
}

// ---- typed access -----------------------------------------------------------

// A section being read; unread keys are reported as unknown.
class SectionReader {
 public:
  SectionReader(const std::string& source, const IniSection* section) : source_(source), section_(section) {}

  bool has(const std::string& key) const { return section_ && section_->entries.count(key); }
  std::size_t line(const std::string& key) const { return section_->entries.at(key).line; }
  std::string at(const std::string& key) const { return detail::where(source_, line(key)); }
  std::string section_name() const { return section_ ? section_->name : ""; }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    detail::invalid(at(key) + section_->name + "." + key + ": " + msg);
  }

  std::optional<std::string> text(const std::string& key) {
    if (!has(key)) return std::nullopt;
    seen_.push_back(key);
    return section_->entries.at(key).value;
  }

  std::optional<double> real(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    auto v = parse_double(*s);
    if (!v || !std::isfinite(*v)) fail(key, "'" + *s + "' is not a finite number");
    return *v;
  }

  std::optional<long long> integer(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    long long v = 0;
    const auto res = std::from_chars(s->data(), s->data() + s->size(), v);
    if (res.ec != std::errc() || res.ptr != s->data() + s->size()) fail(key, "'" + *s + "' is not an integer");
    return v;
  }

  std::optional<bool> boolean(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    if (*s == "true" || *s == "yes" || *s == "1") return true;
    if (*s == "false" || *s == "no" || *s == "0") return false;
    fail(key, "'" + *s + "' is not a boolean");
  }

  std::optional<std::vector<double>> reals(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    std::vector<double> out;
    for (const auto& tok : detail::split_list(*s, ", \t")) {
      auto v = parse_double(tok);
      if (!v || !std::isfinite(*v)) fail(key, "'" + tok + "' is not a finite number");
      out.push_back(*v);
    }
    if (out.empty()) fail(key, "empty list");
    return out;
  }

  std::optional<std::vector<std::string>> names(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    return detail::split_list(*s, ", \t");
  }

  // Rows separated by ';'.
  std::optional<Matrix> matrix(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    std::vector<std::vector<double>> rows;
    for (const auto& r : detail::split_list(*s, ";")) {
      std::vector<double> row;
      for (const auto& tok : detail::split_list(r, ", \t")) {
        auto v = parse_double(tok);
        if (!v || !std::isfinite(*v)) fail(key, "'" + tok + "' is not a finite number");
        row.push_back(*v);
      }
      if (!row.empty()) rows.push_back(row);
    }
    if (rows.empty()) fail(key, "empty matrix");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) fail(key, "rows have different lengths");
      for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
  }

  void reject_unknown() const {
    if (!section_) return;
    for (const auto& [key, e] : section_->entries) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        detail::invalid(detail::where(source_, e.line) + "unknown key '" + key + "' in [" + section_->name + "]");
      }
    }
  }

 private:
  std::string source_;
  const IniSection* section_;
  std::vector<std::string> seen_;
};

// ---- run configuration ------------------------------------------------------

struct SimulateOptions {
  std::uint64_t seed = 1;
  std::size_t length = 0;
  double horizon = 0.0;
  double visit_rate = 1.0;
  std::size_t ids = 1;
  bool stop_when_absorbed = false;
};

struct ForecastOptions {
  std::optional<double> lower, upper;  // evaluation range; default from the data
  std::size_t points = 4001;
  double dt = 1.0;                     // gap to the forecast time (continuous-time classes)
  std::size_t holdout = 0;             // rolling backtest over the last `holdout` records
  double level = 0.01;
};

struct RunConfig {
  std::string source;
  ModelSpec spec;
  Params init;
  DataLayout layout;
  FitOptions fit;
  SimulateOptions simulate;
  ForecastOptions forecast;
};

namespace detail {

inline Distribution default_distribution(Family f) {
  switch (f) {
    case Family::normal: return Normal{};
    case Family::gamma: return GammaDist{};
    case Family::von_mises: return VonMises{};
    case Family::poisson: return Poisson{};
    case Family::bernoulli: return Bernoulli{};
    case Family::bernoulli_offset: return BernoulliOffset{};
    case Family::sv_normal: return SvNormal{};
    case Family::indicator: return Indicator{};
  }
  return Normal{};
}

// 1-based state list -> 0-based flags
inline std::vector<bool> state_flags(SectionReader& r, const std::string& key, int n) {
  std::vector<bool> flags(static_cast<std::size_t>(n), false);
  if (!r.has(key)) return flags;
  const std::vector<double> states = *r.reals(key);
  for (double v : states) {
    if (v != std::floor(v) || v < 1 || v > n) r.fail(key, "states are numbered 1.." + std::to_string(n));
    flags[static_cast<std::size_t>(v) - 1] = true;
  }
  return flags;
}

inline void parse_model(SectionReader& r, RunConfig& c) {
  auto& s = c.spec;
  if (!r.has("class")) detail::invalid(c.source + ": [model] needs 'class'");
  const std::string cls = *r.text("class");
  if (auto k = parse_class(cls)) s.cls = *k;
  else r.fail("class", "unknown model class '" + cls + "'");
  if (auto n = r.integer("states")) {
    if (*n < 1) r.fail("states", "must be >= 1");
    if (is_grid_class(s.cls)) r.fail("states", "grid models take [grid] m instead");
    s.n_states = static_cast<int>(*n);
  }
  if (s.cls == ModelClass::cox_ou_mmpp) s.n_states = 1;
  if (auto v = r.text("initial")) {
    if (*v == "stationary") s.initial = InitialMode::stationary;
    else if (*v == "estimated") s.initial = InitialMode::estimated;
    else if (*v == "fixed") s.initial = InitialMode::fixed;
    else r.fail("initial", "expected stationary, estimated or fixed");
    if (s.initial != InitialMode::stationary && is_grid_class(s.cls)) r.fail("initial", "grid models use the stationary start");
  }
  if (auto v = r.names("tpm_covariates")) {
    if (s.cls != ModelClass::hmm) r.fail("tpm_covariates", "only hmm models take t.p.m. covariates");
    s.tpm_covariates = *v;
  }
  s.mask = GeneratorMask(std::max(1, s.n_states));
  if (auto m = r.matrix("mask")) {
    if (!has_generator(s.cls)) r.fail("mask", "only generator-based classes take a mask");
    if (m->rows() != s.n_states || m->cols() != s.n_states) r.fail("mask", "must be states x states");
    for (int i = 0; i < s.n_states; ++i)
      for (int j = 0; j < s.n_states; ++j) {
        const double f = (*m)(i, j);
        if (f != 0.0 && f != 1.0) r.fail("mask", "entries must be 0 or 1");
        s.mask.set_free(i, j, f == 1.0);
      }
  }
  if (r.has("zero_rates")) {
    if (s.cls != ModelClass::mmpp && s.cls != ModelClass::mmmpp) r.fail("zero_rates", "only mmpp models have arrival rates");
    s.zero_rate = state_flags(r, "zero_rates", s.n_states);
  }
  if (auto v = r.real("dt_star")) {
    if (!(*v > 0.0)) r.fail("dt_star", "must be > 0");
    s.dt_star = *v;
  }
  if (auto v = r.boolean("renormalize")) s.renormalize = *v;
  r.reject_unknown();
}

inline void parse_grid(SectionReader& r, RunConfig& c) {
  auto& s = c.spec;
  if (auto m = r.integer("m")) {
    if (*m < 2) r.fail("m", "must be >= 2");
    s.grid_m = static_cast<int>(*m);
  }
  if (auto v = r.real("lower")) s.grid_lower = *v;
  if (auto v = r.real("upper")) s.grid_upper = *v;
  if (s.grid_lower.has_value() != s.grid_upper.has_value()) {
    detail::invalid(r.at(r.has("lower") ? "lower" : "upper") + "grid.lower and grid.upper go together");
  }
  if (s.grid_lower && !(*s.grid_lower < *s.grid_upper)) r.fail("upper", "must exceed grid.lower");
  r.reject_unknown();
}

inline void parse_init(SectionReader& r, RunConfig& c) {
  const auto& s = c.spec;
  auto& p = c.init;
  const int n = s.n_states;
  if (auto g = r.matrix("gamma")) {
    if (g->rows() != n || g->cols() != n) r.fail("gamma", "must be states x states");
    if (!is_transition_matrix(*g, 1e-8)) r.fail("gamma", "rows must be probabilities summing to 1");
    p.gamma = *g;
  }
  if (auto b = r.matrix("beta")) p.beta = *b;
  if (auto d = r.reals("delta")) {
    if (static_cast<int>(d->size()) != n) r.fail("delta", "needs one entry per state");
    p.delta = Eigen::Map<const RowVector>(d->data(), n);
  }
  if (auto q = r.matrix("q")) {
    if (q->rows() != n || q->cols() != n) r.fail("q", "must be states x states");
    Matrix full = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j || !s.mask.is_free(i, j)) continue;
        if (!((*q)(i, j) > 0.0)) r.fail("q", "free off-diagonal rates must be > 0");
        full(i, j) = (*q)(i, j);
      }
    for (int i = 0; i < n; ++i) full(i, i) = -full.row(i).sum();
    p.q = full;
  }
  if (auto l = r.reals("lambda")) {
    if (static_cast<int>(l->size()) != n) r.fail("lambda", "needs one rate per state");
    p.rates = *l;
  }
  const bool ar1 = s.cls == ModelClass::ssm_ar1;
  auto scalar = [&](const char* key, double& out) {
    if (auto v = r.real(key)) out = *v;
  };
  if (ar1) {
    scalar("phi", p.ar1.phi);
    scalar("mu", p.ar1.mu);
    scalar("sigma", p.ar1.sigma);
  } else {
    scalar("theta", p.ou.theta);
    scalar("mu", p.ou.mu);
    scalar("sigma", p.ou.sigma);
  }
  r.reject_unknown();
}

inline EmissionComponent parse_emission(SectionReader& r, RunConfig& c, const std::string& name) {
  const auto& s = c.spec;
  EmissionComponent comp;
  comp.name = name;
  if (!r.has("family")) detail::invalid(c.source + ": [emission." + name + "] needs 'family'");
  const std::string fam = *r.text("family");
  const auto family = parse_family(fam);
  if (!family) r.fail("family", "unknown family '" + fam + "'");
  const std::string column = r.text("column").value_or(name);
  c.layout.value_columns.push_back(column);
  if (auto cov = r.text("covariate")) {
    if (*family != Family::normal) r.fail("covariate", "only the normal family takes a covariate");
    auto& covs = c.layout.covariate_columns;
    const auto it = std::find(covs.begin(), covs.end(), *cov);
    comp.covariate = static_cast<std::size_t>(it - covs.begin());
    if (it == covs.end()) covs.push_back(*cov);
  }
  if (auto v = r.boolean("state_in_mean")) {
    if (*family != Family::normal) r.fail("state_in_mean", "only the normal family adds the state to its mean");
    comp.state_in_mean = *v;
  }
  const int n = s.n_states;
  if (r.has("unobserved")) {
    if (is_grid_class(s.cls)) r.fail("unobserved", "not available for grid models");
    comp.unobserved = state_flags(r, "unobserved", n);
  }

  std::vector<std::string> keys;
  for (const auto& fp : family_params(*family, comp.covariate.has_value())) keys.push_back(fp.name);
  if (*family == Family::indicator) keys.push_back("marked");
  std::size_t count = 1;
  std::map<std::string, std::vector<double>> vals;
  for (const auto& k : keys) {
    if (!r.has(k)) {
      if (k == "slope") continue;
      detail::invalid(c.source + ":" + std::to_string(r.has("family") ? r.line("family") : 0) + ": [emission." + name +
                      "] needs '" + k + "'");
    }
    vals[k] = *r.reals(k);
    const std::size_t len = vals[k].size();
    if (len != 1) {
      if (is_grid_class(s.cls)) r.fail(k, "grid models take one shared value");
      if (static_cast<int>(len) != n) r.fail(k, "needs 1 or " + std::to_string(n) + " values");
      count = len;
    }
  }
  for (std::size_t j = 0; j < count; ++j) {
    Distribution d = default_distribution(*family);
    for (const auto& [k, v] : vals) {
      const double x = v.size() == 1 ? v[0] : v[j];
      if (k == "marked") std::get<Indicator>(d).marked = x != 0.0;
      else family_param(d, k) = x;
    }
    try {
      validate(d);
    } catch (const InvalidArgument& e) {
      detail::invalid(r.at("family") + "[emission." + name + "] " + e.what());
    }
    comp.per_state.push_back(d);
  }
  r.reject_unknown();
  return comp;
}

inline void parse_fit(SectionReader& r, RunConfig& c) {
  auto& f = c.fit;
  if (auto v = r.integer("max_iterations")) {
    if (*v < 1) r.fail("max_iterations", "must be >= 1");
    f.max_iterations = static_cast<int>(*v);
  }
  auto positive = [&](const char* key, double& out) {
    if (auto v = r.real(key)) {
      if (!(*v > 0.0)) r.fail(key, "must be > 0");
      out = *v;
    }
  };
  positive("gradient_tol", f.gradient_tol);
  positive("relative_tol", f.relative_tol);
  positive("fd_step", f.fd_step);
  positive("hessian_step", f.hessian_step);
  if (auto v = r.boolean("fallback")) f.fallback = *v;
  if (auto v = r.real("level")) {
    if (!(*v > 0.0 && *v < 1.0)) r.fail("level", "must be in (0, 1)");
    f.level = *v;
  }
  if (auto v = r.names("fixed")) c.spec.fixed = *v;
  r.reject_unknown();
}

inline void parse_simulate(SectionReader& r, RunConfig& c) {
  auto& s = c.simulate;
  if (auto v = r.integer("seed")) {
    if (*v < 0) r.fail("seed", "must be >= 0");
    s.seed = static_cast<std::uint64_t>(*v);
  }
  if (auto v = r.integer("length")) {
    if (*v < 1) r.fail("length", "must be >= 1");
    s.length = static_cast<std::size_t>(*v);
  }
  if (auto v = r.real("horizon")) {
    if (!(*v > 0.0)) r.fail("horizon", "must be > 0");
    s.horizon = *v;
  }
  if (auto v = r.real("visit_rate")) {
    if (!(*v > 0.0)) r.fail("visit_rate", "must be > 0");
    s.visit_rate = *v;
  }
  if (auto v = r.integer("ids")) {
    if (*v < 1) r.fail("ids", "must be >= 1");
    s.ids = static_cast<std::size_t>(*v);
  }
  if (auto v = r.boolean("stop_when_absorbed")) s.stop_when_absorbed = *v;
  r.reject_unknown();
}

inline void parse_forecast(SectionReader& r, RunConfig& c) {
  auto& f = c.forecast;
  if (auto v = r.real("lower")) f.lower = *v;
  if (auto v = r.real("upper")) f.upper = *v;
  if (f.lower && f.upper && !(*f.lower < *f.upper)) r.fail("upper", "must exceed forecast.lower");
  if (auto v = r.integer("points")) {
    if (*v < 2) r.fail("points", "must be >= 2");
    f.points = static_cast<std::size_t>(*v);
  }
  if (auto v = r.real("dt")) {
    if (!(*v > 0.0)) r.fail("dt", "must be > 0");
    f.dt = *v;
  }
  if (auto v = r.integer("holdout")) {
    if (*v < 0) r.fail("holdout", "must be >= 0");
    f.holdout = static_cast<std::size_t>(*v);
  }
  if (auto v = r.real("level")) {
    if (!(*v > 0.0 && *v < 1.0)) r.fail("level", "must be in (0, 1)");
    f.level = *v;
  }
  r.reject_unknown();
}

// Fills structural defaults the config may leave out.
inline void complete_init(RunConfig& c) {
  const auto& s = c.spec;
  auto& p = c.init;
  const int n = s.n_states;
  const std::string src = c.source + ": ";
  if (s.cls == ModelClass::hmm && s.tpm_covariates.empty() && p.gamma.size() == 0) {
    if (n != 1) detail::invalid(src + "[init] needs 'gamma'");
    p.gamma = Matrix::Ones(1, 1);
  }
  if (s.cls == ModelClass::hmm && !s.tpm_covariates.empty() && p.beta.size() == 0) {
    detail::invalid(src + "[init] needs 'beta' (one row per off-diagonal, intercept first)");
  }
  if (has_generator(s.cls) && p.q.size() == 0) {
    if (s.mask.free_count() > 0) detail::invalid(src + "[init] needs 'q'");
    p.q = Matrix::Zero(n, n);
  }
  if ((s.cls == ModelClass::mmpp || s.cls == ModelClass::mmmpp) && p.rates.empty()) {
    detail::invalid(src + "[init] needs 'lambda'");
  }
  if (s.initial != InitialMode::stationary && p.delta.size() == 0) {
    detail::invalid(src + "[init] needs 'delta' for model.initial = " +
                    (s.initial == InitialMode::estimated ? "estimated" : "fixed"));
  }
  if (is_grid_class(s.cls) && s.grid_m == 0) detail::invalid(src + "grid models need [grid] m");
  if (s.cls == ModelClass::mmpp && !p.emissions.empty()) detail::invalid(src + "mmpp has no marks; use mmmpp");
  if (s.cls == ModelClass::mmmpp && p.emissions.empty()) detail::invalid(src + "mmmpp needs at least one [emission.*] section");
  if (!is_point_process(s.cls) && p.emissions.empty()) detail::invalid(src + "the model needs at least one [emission.*] section");
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::string& source) {
  const Ini ini = parse_ini(in, source);
  RunConfig c;
  c.source = source;
  auto section = [&](const std::string& name) -> const IniSection* {
    for (const auto& s : ini.sections)
      if (s.name == name) return &s;
    return nullptr;
  };
  for (const auto& s : ini.sections) {
    static const std::vector<std::string> known{"model", "grid", "init", "data", "fit", "simulate", "forecast"};
    if (s.name.rfind("emission.", 0) == 0) continue;
    if (std::find(known.begin(), known.end(), s.name) == known.end()) {
      detail::invalid(detail::where(source, s.line) + "unknown section [" + s.name + "]");
    }
  }
  if (!section("model")) detail::invalid(source + ": missing [model] section");

  SectionReader model(source, section("model"));
  detail::parse_model(model, c);
  SectionReader grid(source, section("grid"));
  if (section("grid") && !is_grid_class(c.spec.cls)) detail::invalid(detail::where(source, section("grid")->line) + "[grid] only applies to grid models");
  detail::parse_grid(grid, c);
  SectionReader init(source, section("init"));
  detail::parse_init(init, c);

  for (const auto& s : ini.sections) {
    if (s.name.rfind("emission.", 0) != 0) continue;
    const std::string name = s.name.substr(9);
    if (name.empty()) detail::invalid(detail::where(source, s.line) + "emission section needs a name");
    SectionReader er(source, &s);
    c.init.emissions.components.push_back(detail::parse_emission(er, c, name));
  }

  SectionReader data(source, section("data"));
  c.layout.id_column = data.text("id").value_or("");
  c.layout.time_column = data.text("time").value_or("");
  data.reject_unknown();
  c.layout.tpm_covariates = c.spec.tpm_covariates;

  SectionReader fit(source, section("fit"));
  detail::parse_fit(fit, c);
  SectionReader sim(source, section("simulate"));
  detail::parse_simulate(sim, c);
  SectionReader fc(source, section("forecast"));
  detail::parse_forecast(fc, c);

  detail::complete_init(c);
  try {
    c.spec = resolve_grid(c.spec, c.init);
    validate(c.spec, c.init);
    describe(c.spec, c.init);
  } catch (const std::exception& e) {
    detail::invalid(source + ": " + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::invalid(path + ": cannot open file");
  return parse_config(in, path);
}

}  // namespace latmark
