#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "smflow/scenario.hpp"
#include "smflow/suites.hpp"

namespace {

enum Exit : int { kPass = 0, kCheckFailed = 1, kUsage = 2, kNumerical = 3 };

void print_checks(const std::vector<smflow::CheckItem>& checks) {
  for (const auto& c : checks)
    std::cout << (c.pass ? "  PASS " : "  FAIL ") << c.name << " = " << smflow::format_number(c.value)
              << " (threshold " << smflow::format_number(c.threshold) << ")\n";
}

int cmd_run(const std::string& config, const std::vector<std::string>& sets) {
  const auto cfg = smflow::load_config(config, sets);
  const auto out = smflow::run_scenario(cfg);
  std::cout << "artifacts: " << out.directory.string() << "\n";
  print_checks(out.result.checks);
  std::cout << (out.result.pass() ? "PASS" : "FAIL") << "\n";
  return out.result.pass() ? kPass : kCheckFailed;
}

int cmd_converge(const std::string& config, const std::vector<std::string>& sets, const std::string& levels,
                 double min_order) {
  const auto cfg = smflow::load_config(config, sets);
  const auto table = smflow::convergence_study(cfg, smflow::parse_levels(levels));
  const auto dir = smflow::output_root(cfg) / cfg.name;
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "convergence.csv") << table.csv();
  smflow::write_json(dir / "convergence.json", smflow::to_json(table));
  std::cout << table.csv();
  if (std::isnan(min_order)) return kPass;
  bool ok = true;
  for (const auto& r : table.rows)
    if (std::isfinite(r.order) && r.order < min_order) ok = false;
  std::cout << (ok ? "PASS" : "FAIL") << " observed orders >= " << smflow::format_number(min_order) << "\n";
  return ok ? kPass : kCheckFailed;
}

int cmd_check(const std::string& suite, std::uint64_t seed, const std::string& report) {
  const auto r = smflow::check_suite(suite, seed);
  const auto j = smflow::to_json(r);
  if (!report.empty()) smflow::write_json(report, j);
  std::cout << j.dump(2) << "\n";
  return r.pass() ? kPass : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schroedinger map flow: scenario runs, convergence tables and property suites"};
  app.require_subcommand(1);

  std::string config, levels, suite, report;
  std::vector<std::string> sets;
  double min_order = std::nan("");
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "run one scenario and write its artifacts");
  run->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
  run->add_option("--set", sets, "override, key=value (dotted keys)");

  auto* conv = app.add_subcommand("converge", "error and observed order over refinement levels");
  conv->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
  conv->add_option("--levels", levels, "N[:dt],N[:dt],... coarse to fine")->required();
  conv->add_option("--set", sets, "override, key=value (dotted keys)");
  conv->add_option("--min-order", min_order, "fail when an observed order falls below this");

  auto* check = app.add_subcommand("check", "run a property suite");
  check->add_option("suite", suite, "conservation | holonomy | strichartz | reduction | all")->required();
  check->add_option("--seed", seed, "seed for randomized data");
  check->add_option("--report", report, "also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*run) return cmd_run(config, sets);
    if (*conv) return cmd_converge(config, sets, levels, min_order);
    if (*check) return cmd_check(suite, seed, report);
  } catch (const smflow::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const smflow::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const smflow::BlowUpSuspected& e) {
    std::cerr << "numerical failure: " << e.what() << "\n" << e.diagnostics() << "\n";
    return kNumerical;
  } catch (const smflow::NoConvergence& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const smflow::RejectedStep& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const smflow::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}
