#include "fedrf/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fedrf;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fedrf-exp-" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentConfig parsed(const std::string& text) { return parse_config(Json::parse(text)); }

std::string config_error_field(const std::string& text) {
  try {
    parsed(text).validate();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

ExperimentConfig small_experiment() {
  ExperimentConfig cfg = parsed(R"({
    "dataset": {"synthetic": {"sources": 2, "samples_per_domain": 160}},
    "kernel": {"n_features": 32},
    "tca": {"m": 8},
    "protocol": {"rounds": 30, "classifier_interval": 10}
  })");
  return cfg;
}

}  // namespace

TEST(Config, DefaultsMirrorMostUsedSettings) {
  const ExperimentConfig cfg = parsed("{}");
  EXPECT_EQ(cfg.n_features, 1000u);
  EXPECT_EQ(cfg.m, 100u);
  EXPECT_FALSE(cfg.gamma.has_value());
  EXPECT_EQ(cfg.sigma, 0.0);
  EXPECT_EQ(cfg.protocol.lambda, 1.0);
  EXPECT_EQ(cfg.protocol.classifier_interval, 50u);
  EXPECT_TRUE(cfg.dataset.synthetic.has_value());
  EXPECT_EQ(cfg.bench.n_features, (std::vector<std::size_t>{100, 500, 1000, 2000, 5000}));
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, RoundTripsThroughJson) {
  ExperimentConfig cfg = parsed(R"({
    "dataset": {"synthetic": {"shift": 0.5, "rotation": 0.3}},
    "kernel": {"sigma": 2.5, "n_features": 64, "seed": 9},
    "tca": {"gamma": 0.1, "m": 4},
    "protocol": {"participation": "full", "classifier_mode": "hard_vote",
                 "policy": {"levels": ["A", "B", "C"], "feature_order": "ordered", "weight_order": "random"},
                 "optimizer": {"learning_rate": 0.01, "steps": 2}},
    "network": {"drop_probability": [0.1, 0.2, 0.3], "availability": 0.9},
    "evaluation": {"repeats": 3}
  })");
  EXPECT_EQ(cfg.protocol.policy.level, (std::array<int, 3>{0, 1, 2}));
  EXPECT_EQ(cfg.protocol.policy.feature_order, OrderingMode::ordered);
  EXPECT_EQ(cfg.protocol.participation, Participation::full);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(*cfg.kernel_seed, 9u);
  const Json once = to_json(cfg);
  EXPECT_EQ(to_json(parse_config(once)), once);
}

TEST(Config, ValidationNamesTheField) {
  EXPECT_EQ(config_error_field(R"({"kernel": {"n_features": 10}, "tca": {"m": 21}})"), "tca.m");
  EXPECT_NO_THROW(parsed(R"({"kernel": {"n_features": 10}, "tca": {"m": 20}})").validate());
  EXPECT_EQ(config_error_field(R"({"protocol": {"classifier_interval": 0}})"), "protocol.classifier_interval");
  EXPECT_EQ(config_error_field(R"({"dataset": {"target": "t.csv"}})"), "dataset.sources");
  EXPECT_EQ(config_error_field(R"({"dataset": {"sources": ["s.csv"]}})"), "dataset.target");
  EXPECT_EQ(config_error_field(R"({"tca": {"gamma": -1}})"), "tca.gamma");
  EXPECT_EQ(config_error_field(R"({"protocol": {"rounds": "many"}})"), "protocol.rounds");
  EXPECT_EQ(config_error_field(R"({"protocol": {"policy": {"levels": ["B", "A", "A"]}}})"), "protocol.policy");
  EXPECT_EQ(config_error_field(R"({"network": {"drop_probability": [0.1]}})"), "network.drop_probability");
  EXPECT_EQ(config_error_field(R"({"network": {"availability": 2}})"), "network");
  EXPECT_EQ(config_error_field(R"({"tca": {"mm": 3}})"), "tca.mm");
  EXPECT_EQ(config_error_field(R"({"protocol": {"participation": "most"}})"), "protocol.participation");
  EXPECT_EQ(config_error_field(R"({"evaluation": {"seeds": []}})"), "evaluation.seeds");
}

TEST(Config, OverridesSetNestedFields) {
  Json root = Json::parse(R"({"protocol": {"rounds": 5}})");
  apply_override(root, "protocol.rounds=12");
  apply_override(root, "protocol.participation=full");
  apply_override(root, "network.drop_probability=[0.5,0,0]");
  const ExperimentConfig cfg = parse_config(root);
  EXPECT_EQ(cfg.protocol.rounds, 12u);
  EXPECT_EQ(cfg.protocol.participation, Participation::full);
  EXPECT_EQ(cfg.protocol.network.drop_probability[0], 0.5);
  EXPECT_THROW(apply_override(root, "no-equals"), ConfigError);
  EXPECT_THROW(apply_override(root, "a..b=1"), ConfigError);
}

TEST(Config, LoadsFileDomains) {
  const auto dir = scratch("files");
  std::filesystem::create_directories(dir);
  SynthSpec spec;
  spec.sources = 2;
  spec.samples_per_domain = 50;
  const auto domains = generate_synthetic(spec);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    MatrixFile f{domains[i].features, domains[i].evaluation_labels()};
    paths.push_back((dir / ("d" + std::to_string(i) + ".csv")).string());
    save_matrix(paths.back(), f, MatrixFormat::csv);
  }
  Json root;
  root["dataset"] = {{"sources", {paths[0], paths[1]}}, {"target", paths[2]}};
  const ExperimentConfig cfg = parse_config(root);
  ASSERT_FALSE(cfg.dataset.synthetic.has_value());
  const auto loaded = load_domains(cfg, 0);
  ASSERT_EQ(loaded.size(), 3u);
  EXPECT_TRUE(loaded[0].labelled());
  EXPECT_FALSE(loaded[2].labelled());
  EXPECT_EQ(loaded[2].evaluation_labels(), domains[2].evaluation_labels());
  EXPECT_EQ(loaded[1].features.data, domains[1].features.data);
  std::filesystem::remove_all(dir);
}

TEST(RftcaBench, MatchesExactTcaAtFullRank) {
  // N = n on n = 200, on a shift mild enough that 1-NN accuracy is well above chance.
  ExperimentConfig cfg = parsed(R"({
    "dataset": {"synthetic": {"sources": 1, "samples_per_domain": 100, "shift": 0.2}},
    "tca": {"m": 8},
    "bench": {"n_features": [200]},
    "evaluation": {"repeats": 5}
  })");
  const auto rows = run_rftca_bench(cfg);
  ASSERT_EQ(rows.size(), 10u);
  double exact = 0.0, rf = 0.0;
  for (const auto& r : rows) (r.method == "tca" ? exact : rf) += r.accuracy / 5.0;
  EXPECT_LT(std::abs(exact - rf), 0.05) << "tca " << exact << ", rf-tca " << rf;
}

TEST(RftcaBench, RandomFeaturesAreFasterOnLargeSamples) {
  // n = 2000; best of three runs per method to damp scheduler noise.
  ExperimentConfig cfg = parsed(R"({
    "dataset": {"synthetic": {"sources": 1, "samples_per_domain": 1000}},
    "tca": {"m": 10},
    "bench": {"n_features": [100, 500, 1000]}
  })");
  std::vector<BenchRow> best;
  for (int rep = 0; rep < 3; ++rep) {
    const auto rows = run_rftca_bench(cfg);
    if (best.empty()) best = rows;
    for (std::size_t i = 0; i < rows.size(); ++i) best[i].seconds = std::min(best[i].seconds, rows[i].seconds);
  }
  ASSERT_EQ(best.front().method, "tca");
  for (std::size_t i = 1; i < best.size(); ++i) {
    EXPECT_LT(best[i].seconds, best.front().seconds) << "N = " << best[i].n_features;
  }
  std::ostringstream csv;
  write_bench_csv(csv, best);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "method,N,seed,accuracy,seconds");
}

TEST(RftcaBench, EmptyDatasetFailsBeforeCompute) {
  ExperimentConfig cfg = parsed(R"({"dataset": {"sources": [], "target": "x.csv"}})");
  EXPECT_THROW(run_rftca_bench(cfg), ConfigError);
}

TEST(FedRun, RerunIsByteIdentical) {
  ExperimentConfig cfg = small_experiment();
  cfg.protocol.network.drop_probability = {0.2, 0.1, 0.3};
  const auto a = scratch("run-a"), b = scratch("run-b");
  cfg.output = a.string();
  const auto first = cmd_fed_run(cfg);
  cfg.output = b.string();
  cmd_fed_run(cfg);
  for (const char* name : {"metrics_0.jsonl", "ledger_0.csv", "summary.csv"}) {
    ASSERT_TRUE(std::filesystem::exists(a / name)) << name;
    EXPECT_EQ(read_file(a / name), read_file(b / name)) << name;
  }
  EXPECT_EQ(load_metrics((a / "metrics_0.jsonl").string()).size(), 30u);
  EXPECT_GT(first.front().initial_mmd, 0.0);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(CommTable, MeasuredVolumeIndependentOfSamples) {
  ExperimentConfig cfg = parsed(R"({
    "comm": {"clients": [2, 3], "samples": [100, 200, 400], "n_features": [16, 32], "m": [4, 8]}
  })");
  const auto rows = cmd_comm_table(cfg);
  ASSERT_EQ(rows.size(), 24u);
  for (const auto& r : rows) EXPECT_EQ(r.fedrf_measured, r.fedrf_analytic);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& a = rows[i];
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const auto& b = rows[j];
      if (a.clients == b.clients && a.features == b.features && a.m == b.m) {
        EXPECT_EQ(a.fedrf_measured, b.fedrf_measured);
        if (b.samples == 2 * a.samples) {
          EXPECT_DOUBLE_EQ(b.fada / a.fada, 2.0);
        }
      }
    }
  }
}

TEST(Validate, MinimalConfigHasNoWarnings) {
  const auto cfg = load_config(std::string(FEDRF_TEST_DATA) + "/minimal.json");
  const auto rep = cmd_validate(cfg);
  EXPECT_TRUE(rep.warnings.empty());
  EXPECT_GT(rep.eigen_gap, 0.0);
  EXPECT_LE(rep.bounds.lower, rep.bounds.value + 1e-10);
  EXPECT_LE(rep.bounds.value, rep.bounds.upper + 1e-10);
}

TEST(Validate, GammaOutsideSensitiveIntervalIsHinted) {
  ExperimentConfig cfg = small_experiment();
  const auto base = cmd_validate(cfg);
  const double inside = std::sqrt(base.interval.low * base.interval.high);
  cfg.gamma = inside;
  EXPECT_TRUE(cmd_validate(cfg).hints.empty());
  cfg.gamma = base.interval.high * 100.0;
  const auto high = cmd_validate(cfg);
  ASSERT_EQ(high.hints.size(), 1u);
  EXPECT_NE(high.hints.front().find("above"), std::string::npos);
  cfg.gamma = base.interval.low / 100.0;
  EXPECT_NE(cmd_validate(cfg).hints.front().find("below"), std::string::npos);
}

TEST(Validate, NeverAggregatedClassifierIsWarned) {
  ExperimentConfig cfg = small_experiment();
  cfg.protocol.classifier_interval = 1000;
  const auto rep = cmd_validate(cfg);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings.front().find("hard_vote"), std::string::npos);
}
