#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gsl/gsl_cdf.h>
#include <gtest/gtest.h>

#include "latmark/commands.hpp"

using namespace latmark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latmark_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Json load_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

std::string configs(const std::string& name) { return std::string(LATMARK_CONFIGS) + "/" + name; }

// Runs the installed executable; returns its exit status and captured stderr.
std::pair<int, std::string> run_cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(LATMARK_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

CommandOptions opts(const std::string& config, const fs::path& out) {
  CommandOptions o;
  o.config = config;
  o.out = out.string();
  return o;
}

const std::string one_state_normal = R"([model]
class = hmm
states = 1

[emission.x]
family = normal
mean = 0
sd = 2
)";

}  // namespace

TEST(Csv, CanonicalFileWritesBackByteIdentical) {
  const std::string text = "id,t,x,note\nA,1,0.5,\"a, b\"\nA,2,,plain\nB,1,-3e-07,\"say \"\"hi\"\"\"\n";
  std::istringstream in(text);
  std::ostringstream out;
  write_csv(out, read_csv(in, "mem.csv"));
  EXPECT_EQ(out.str(), text);
}

TEST(Csv, NumbersRoundTripExactly) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int k = 0; k < 1000; ++k) {
    const double x = z(rng) * std::pow(10.0, k % 21 - 10);
    EXPECT_EQ(*parse_double(format_double(x)), x);
  }
  EXPECT_EQ(format_double(NAN), "");
  EXPECT_FALSE(parse_double("1.5x"));
  EXPECT_FALSE(parse_double(""));
}

TEST(Csv, ErrorsNameFileAndLine) {
  std::istringstream ragged("a,b\n1,2\n3\n");
  try {
    read_csv(ragged, "bad.csv");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("bad.csv:3:"), std::string::npos) << e.what();
  }

  std::istringstream in("t,x\n1,0.1\n1,0.2\n");
  const Table t = read_csv(in, "dup.csv");
  DataLayout layout;
  layout.time_column = "t";
  layout.value_columns = {"x"};
  try {
    build_dataset(t, layout, ModelClass::cthmm);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("dup.csv:3:"), std::string::npos) << e.what();
  }
}

TEST(Config, ErrorsAreLineAnchored) {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_config(in, "c.ini");
    } catch (const InvalidArgument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message(one_state_normal + "colour = red\n").find("c.ini:9:"), std::string::npos);
  EXPECT_NE(message("[model]\nclass = hmm\nstates = 2\n\n[init]\ngamma = 0.5 0.6; 0.5 0.5\n").find("c.ini:6: init.gamma"),
            std::string::npos);
  EXPECT_NE(message("[model]\nclass = ssm-ar1\n[grid]\nm = 1\n").find("c.ini:4: grid.m"), std::string::npos);
  EXPECT_NE(message("[model]\nclass = hmm\n[model]\n").find("c.ini:3:"), std::string::npos);
  EXPECT_NE(message("[model]\nclass = hmm\nstates = 2\n[nonsense]\n").find("c.ini:4:"), std::string::npos);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(LATMARK_CONFIGS)) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
  }
}

TEST(Cli, GridSmallerThanTwoExitsWithInputError) {
  const fs::path dir = scratch("m1");
  put(dir / "sv.ini", "[model]\nclass = ssm-ar1\n\n[grid]\nm = 1\n");
  put(dir / "data.csv", "y\n0.1\n");
  const auto [code, err] = run_cli("fit --config " + (dir / "sv.ini").string() + " --data " + (dir / "data.csv").string(), dir);
  EXPECT_EQ(code, kExitInputError);
  EXPECT_NE(err.find("grid.m"), std::string::npos) << err;
}

TEST(Cli, NonConvergenceExitsWithTwo) {
  const fs::path dir = scratch("nonconv");
  put(dir / "m.ini", one_state_normal + "\n[fit]\nmax_iterations = 1\n");
  put(dir / "data.csv", "x\n1\n2\n3\n4\n10\n");
  const auto [code, err] = run_cli("fit --config " + (dir / "m.ini").string() + " --data " + (dir / "data.csv").string() +
                                       " --out " + dir.string(),
                                   dir);
  EXPECT_EQ(code, kExitNotConverged) << err;
  EXPECT_FALSE(load_json(dir / "fit.json")["converged"].get<bool>());
}

TEST(Cli, OneStateFitOnThreeRowsIsClosedForm) {
  const fs::path dir = scratch("three");
  put(dir / "m.ini", one_state_normal);
  put(dir / "data.csv", "x\n1\n2\n3\n");
  CommandOptions o = opts((dir / "m.ini").string(), dir);
  o.data = (dir / "data.csv").string();
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(o, log), kExitOk);
  const Json j = load_json(dir / "fit.json");
  EXPECT_NEAR(j.at("estimates").at("x.mean").get<double>(), 2.0, 1e-6);
  EXPECT_NEAR(j.at("estimates").at("x.sd").get<double>(), std::sqrt(2.0 / 3.0), 1e-6);
  for (const char* key : {"loglik", "aic", "bic", "covariance", "intervals", "trace", "converged"}) EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Cli, SimulateIsDeterministicAndSeedSensitive) {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b"), c = scratch("sim_c");
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(opts(configs("whale_mmpp.ini"), a), log), kExitOk);
  ASSERT_EQ(cmd_simulate(opts(configs("whale_mmpp.ini"), b), log), kExitOk);
  EXPECT_EQ(slurp(a / "data.csv"), slurp(b / "data.csv"));
  EXPECT_EQ(slurp(a / "truth.csv"), slurp(b / "truth.csv"));
  CommandOptions o = opts(configs("whale_mmpp.ini"), c);
  o.seed = 99;
  ASSERT_EQ(cmd_simulate(o, log), kExitOk);
  EXPECT_NE(slurp(a / "data.csv"), slurp(c / "data.csv"));
}

TEST(Cli, SimulatedCsvIngestsLosslessly) {
  const fs::path dir = scratch("lossless");
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(opts(configs("ou_ctssm.ini"), dir), log), kExitOk);
  const RunConfig cfg = load_config(configs("ou_ctssm.ini"));
  const Dataset data = build_dataset(read_csv_file((dir / "data.csv").string()), cfg.layout, cfg.spec.cls);

  SimDesign d;
  d.horizon = cfg.simulate.horizon;
  d.visit_rate = cfg.simulate.visit_rate;
  Rng rng = make_stream(cfg.simulate.seed, 0);
  const SimResult sim = simulate_sequence(cfg.spec, cfg.init, d, rng);
  ASSERT_EQ(data.size(), 1u);
  ASSERT_EQ(data[0].length(), sim.seq.length());
  for (std::size_t t = 0; t < sim.seq.length(); ++t) {
    ASSERT_EQ(data[0].times[t], sim.seq.times[t]);
    ASSERT_EQ(data[0].obs[t].values[0], sim.seq.obs[t].values[0]);
  }
  // and the written table is already canonical
  std::ostringstream again;
  write_csv(again, read_csv_file((dir / "data.csv").string()));
  EXPECT_EQ(again.str(), slurp(dir / "data.csv"));
}

TEST(Cli, MmppEventTimesStrictlyIncrease) {
  const fs::path dir = scratch("mmpp_times");
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(opts(configs("whale_mmpp.ini"), dir), log), kExitOk);
  const Table t = read_csv_file((dir / "data.csv").string());
  const std::size_t id = t.column("whale"), time = t.column("seconds");
  ASSERT_GT(t.rows.size(), 100u);
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    if (t.rows[r][id] != t.rows[r - 1][id]) continue;
    EXPECT_GT(*parse_double(t.rows[r][time]), *parse_double(t.rows[r - 1][time])) << "row " << r;
  }
}

TEST(Cli, PerIdFitGivesOneBlockPerId) {
  const fs::path dir = scratch("per_id");
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(opts(configs("whale_mmpp.ini"), dir), log), kExitOk);
  CommandOptions o = opts(configs("whale_mmpp.ini"), dir);
  o.data = (dir / "data.csv").string();
  o.per_id = true;
  o.threads = 2;
  EXPECT_EQ(cmd_fit(o, log), kExitOk);
  const Json j = load_json(dir / "fit.json");
  ASSERT_TRUE(j.contains("fits"));
  ASSERT_EQ(j["fits"].size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(j["fits"][k]["id"], std::to_string(k + 1));
    EXPECT_GT(j["fits"][k].at("estimates").at("lambda[1]").get<double>(), 0.0);
    EXPECT_FALSE(j["fits"][k]["estimates"].contains("lambda[2]"));
  }

  // per-id estimates feed decode one id at a time
  o.estimates = (dir / "fit.json").string();
  ASSERT_EQ(cmd_decode(o, log), kExitOk);
  const Json d = load_json(dir / "decode.json");
  ASSERT_EQ(d["sequences"].size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(d["sequences"][k]["loglik"].get<double>(), j["fits"][k]["loglik"].get<double>(), 1e-8);
}

TEST(Cli, OneStateDecodeIsConstant) {
  const fs::path dir = scratch("decode1");
  put(dir / "m.ini", one_state_normal);
  put(dir / "data.csv", "x\n1\n-4\n2.5\n7\n");
  CommandOptions o = opts((dir / "m.ini").string(), dir);
  o.data = (dir / "data.csv").string();
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(o, log), kExitOk);
  o.estimates = (dir / "fit.json").string();
  ASSERT_EQ(cmd_decode(o, log), kExitOk);
  const Table t = read_csv_file((dir / "decoded.csv").string());
  const std::size_t k = t.column("decoded_state");
  for (const auto& row : t.rows) EXPECT_EQ(row[k], "1");
}

TEST(Cli, WellSeparatedDecodeMatchesTruthAndLikelihoodReloads) {
  const fs::path dir = scratch("decode2");
  put(dir / "m.ini", R"([model]
class = hmm
states = 2

[init]
gamma = 0.95 0.05; 0.05 0.95

[emission.x]
family = normal
mean = -3, 3
sd = 1, 1

[simulate]
seed = 17
length = 2000
)");
  std::ostringstream log;
  CommandOptions o = opts((dir / "m.ini").string(), dir);
  ASSERT_EQ(cmd_simulate(o, log), kExitOk);
  o.data = (dir / "data.csv").string();
  ASSERT_EQ(cmd_fit(o, log), kExitOk);
  o.estimates = (dir / "fit.json").string();
  ASSERT_EQ(cmd_decode(o, log), kExitOk);

  const Table decoded = read_csv_file((dir / "decoded.csv").string());
  const Table truth = read_csv_file((dir / "truth.csv").string());
  ASSERT_EQ(decoded.rows.size(), truth.rows.size());
  const std::size_t dk = decoded.column("decoded_state"), tk = truth.column("state");
  std::size_t agree = 0;
  for (std::size_t r = 0; r < truth.rows.size(); ++r) agree += decoded.rows[r][dk] == truth.rows[r][tk];
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(truth.rows.size()), 0.99);

  EXPECT_NEAR(load_json(dir / "decode.json")["loglik"].get<double>(), load_json(dir / "fit.json")["loglik"].get<double>(), 1e-8);
}

TEST(Cli, GridDecodeStaysOnMidpoints) {
  const fs::path dir = scratch("decode_grid");
  put(dir / "sv.ini", R"([model]
class = ssm-ar1

[grid]
m = 40
lower = -3
upper = 3

[init]
phi = 0.9
mu = 0
sigma = 0.5

[emission.y]
family = sv-scaled-normal
mu = 0
beta = 0.02

[simulate]
seed = 5
length = 300
)");
  put(dir / "fit.json", R"({"model": "ssm-ar1", "grid": {"m": 40, "lower": -3, "upper": 3},
    "estimates": {"phi": 0.9, "mu": 0, "sigma": 0.5, "y.mu": 0, "y.beta": 0.02}})");
  std::ostringstream log;
  CommandOptions o = opts((dir / "sv.ini").string(), dir);
  ASSERT_EQ(cmd_simulate(o, log), kExitOk);
  o.data = (dir / "data.csv").string();
  o.estimates = (dir / "fit.json").string();
  ASSERT_EQ(cmd_decode(o, log), kExitOk);

  std::vector<double> mids;
  for (int j = 0; j < 40; ++j) mids.push_back(-3.0 + 6.0 * (j + 0.5) / 40.0);
  const Table t = read_csv_file((dir / "decoded.csv").string());
  const std::size_t v = t.column("decoded_value"), vol = t.column("decoded_volatility");
  for (const auto& row : t.rows) {
    const double g = *parse_double(row[v]);
    double nearest = INFINITY;
    for (double b : mids) nearest = std::min(nearest, std::abs(b - g));
    EXPECT_LE(nearest, 1e-12) << row[v];
    EXPECT_DOUBLE_EQ(*parse_double(row[vol]), std::exp(*parse_double(row[v]) / 2.0));
  }
}

TEST(Cli, OneStateForecastQuantileIsTheNormalQuantile) {
  const fs::path dir = scratch("forecast1");
  put(dir / "m.ini", one_state_normal + "\n[forecast]\nlevel = 0.01\npoints = 2001\n");
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(1.5, 0.7);
  std::string csv = "x\n";
  for (int k = 0; k < 400; ++k) csv += format_double(z(rng)) + "\n";
  put(dir / "data.csv", csv);
  std::ostringstream log;
  CommandOptions o = opts((dir / "m.ini").string(), dir);
  o.data = (dir / "data.csv").string();
  ASSERT_EQ(cmd_fit(o, log), kExitOk);
  o.estimates = (dir / "fit.json").string();
  ASSERT_EQ(cmd_forecast(o, log), kExitOk);

  const Json fit = load_json(dir / "fit.json");
  const double mu = fit.at("estimates").at("x.mean").get<double>(), sd = fit.at("estimates").at("x.sd").get<double>();
  const Table grid = read_csv_file((dir / "forecast.csv").string());
  const std::size_t xk = grid.column("x"), wk = grid.column("weight");
  const double cell = *parse_double(grid.rows[1][xk]) - *parse_double(grid.rows[0][xk]);
  double total = 0.0;
  for (const auto& row : grid.rows) total += *parse_double(row[wk]);
  EXPECT_NEAR(total, 1.0, 1e-12);

  const double var = load_json(dir / "var.json")["forecasts"][0]["quantile"].get<double>();
  EXPECT_NEAR(var, mu + gsl_cdf_ugaussian_Pinv(0.01) * sd, cell);
}

TEST(Cli, BacktestCountsExceedances) {
  const fs::path dir = scratch("backtest");
  put(dir / "m.ini", one_state_normal + "\n[forecast]\nholdout = 5\n");
  put(dir / "data.csv", "x\n0\n0\n0\n0\n0\n-10\n0\n0\n-10\n0\n");
  put(dir / "fit.json", R"({"model": "hmm", "estimates": {"x.mean": 0, "x.sd": 1}})");
  CommandOptions o = opts((dir / "m.ini").string(), dir);
  o.data = (dir / "data.csv").string();
  o.estimates = (dir / "fit.json").string();
  o.level = 0.05;
  std::ostringstream log;
  ASSERT_EQ(cmd_forecast(o, log), kExitOk);
  const Json j = load_json(dir / "var.json");
  EXPECT_EQ(j["backtest"]["tested"], 5);
  EXPECT_EQ(j["backtest"]["exceedances"], 2);
  const Table bt = read_csv_file((dir / "backtest.csv").string());
  ASSERT_EQ(bt.rows.size(), 5u);
  EXPECT_NEAR(*parse_double(bt.rows[0][bt.column("var")]), gsl_cdf_ugaussian_Pinv(0.05), 1e-9);
}

TEST(Cli, MissingEstimateIsReported) {
  const fs::path dir = scratch("bad_est");
  put(dir / "m.ini", one_state_normal);
  put(dir / "data.csv", "x\n1\n");
  put(dir / "fit.json", R"({"model": "hmm", "estimates": {"x.mean": 0}})");
  const auto [code, err] = run_cli("decode --config " + (dir / "m.ini").string() + " --data " + (dir / "data.csv").string() +
                                       " --estimates " + (dir / "fit.json").string() + " --out " + dir.string(),
                                   dir);
  EXPECT_EQ(code, kExitInputError);
  EXPECT_NE(err.find("x.sd"), std::string::npos) << err;
}
