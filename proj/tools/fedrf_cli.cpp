#include "fedrf/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace fedrf;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigInvalid = 2, kNumerical = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const Options& opt) {
  Json root = Json::object();
  if (!opt.config.empty()) {
    std::ifstream is(opt.config);
    if (!is) throw ConfigError("cannot open config file " + opt.config, "config");
    try {
      root = Json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "config");
    }
  }
  for (const auto& o : opt.overrides) apply_override(root, o);
  ExperimentConfig cfg = parse_config(root);
  if (opt.seed) cfg.seeds = {*opt.seed};
  if (!opt.out.empty()) cfg.output = opt.out;
  cfg.validate();
  return cfg;
}

// Writes the CSV to <out>/<name> and echoes it to stdout.
template <class Writer>
void emit(const ExperimentConfig& cfg, const std::string& name, Writer&& write) {
  std::filesystem::create_directories(cfg.output);
  const auto path = std::filesystem::path(cfg.output) / name;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  write(os);
  if (!os) throw InvalidInputError("cannot write " + path.string());
  write(std::cout);
}

void write_diagnostic(const Options& opt, const std::string& verb, const std::exception& e) {
  const std::string dir = opt.out.empty() ? "." : opt.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = std::filesystem::path(dir) / "diagnostic.txt";
  std::ofstream os(path, std::ios::trunc);
  os << "command: " << verb << "\nerror: " << e.what() << '\n';
  if (const auto* ce = dynamic_cast<const ConvergenceError*>(&e)) {
    os << "residual: " << ce->residual() << "\nlast_iterate_size: " << ce->last_iterate().size() << '\n';
  }
  std::cerr << "diagnostic written to " << path.string() << '\n';
}

int run(const std::string& verb, const Options& opt) {
  try {
    const ExperimentConfig cfg = resolve(opt);
    if (verb == "rftca-bench") {
      const auto rows = run_rftca_bench(cfg);
      emit(cfg, "rftca_bench.csv", [&](std::ostream& os) { write_bench_csv(os, rows); });
    } else if (verb == "fed-run") {
      for (const auto& s : cmd_fed_run(cfg)) {
        std::cout << "seed " << s.seed << ": final accuracy " << s.final_accuracy << ", mmd " << s.initial_mmd << " -> "
                  << s.final_mmd << ", flagged rounds " << s.flagged_rounds << '\n';
      }
      std::cout << "outputs in " << cfg.output << '\n';
    } else if (verb == "comm-table") {
      const auto rows = cmd_comm_table(cfg);
      emit(cfg, "comm_table.csv", [&](std::ostream& os) { write_comm_csv(os, rows); });
    } else {
      write_validation(std::cout, cmd_validate(cfg));
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error (" << e.field() << "): " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const SingularityError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    write_diagnostic(opt, verb, e);
    return kNumerical;
  } catch (const ConvergenceError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    write_diagnostic(opt, verb, e);
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-feature TCA and federated domain adaptation experiments"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;

  const std::vector<std::pair<std::string, std::string>> verbs{
      {"rftca-bench", "exact-kernel TCA against RF-TCA over the N grid"},
      {"fed-run", "federated training, writes metrics and ledgers"},
      {"comm-table", "analytic and measured per-round communication"},
      {"validate", "check a config and print instance diagnostics"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run a single seed");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--set", opt.overrides, "override a field, e.g. protocol.rounds=200");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigInvalid;
  }
  for (auto* sub : subs) {
    if (sub->parsed()) {
      if (sub->count("--seed") > 0) opt.seed = seed;
      return run(sub->get_name(), opt);
    }
  }
  return kFailure;
}
