// fedsplit: federated client-selection experiment runner.
//
//   fedsplit run     [-c FILE] [--set section.key=value ...]
//   fedsplit compare [-c FILE] [--strategies random,poc,oort,terraform] [--set ...]
//   fedsplit ablate  {update_signal|quartile_range|eta} [-c FILE] [--set ...]
//   fedsplit inspect SPLITS_CSV

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "fedsplit/config.hpp"
#include "fedsplit/errors.hpp"
#include "fedsplit/runner.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

Overrides parse_overrides(const std::vector<std::string>& raw) {
  Overrides out;
  for (const auto& item : raw) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw fedsplit::InvalidArgument("--set expects section.key=value, got '" + item + "'");
    }
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

fedsplit::ExperimentConfig resolve(const std::string& path, const std::vector<std::string>& sets) {
  const auto overrides = parse_overrides(sets);
  if (path.empty()) {
    return fedsplit::parse_config("", overrides);
  }
  return fedsplit::load_config(path, overrides);
}

std::vector<fedsplit::Strategy> parse_strategies(const std::string& list) {
  std::vector<fedsplit::Strategy> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    bool found = false;
    for (auto s : {fedsplit::Strategy::random, fedsplit::Strategy::poc, fedsplit::Strategy::oort,
                   fedsplit::Strategy::terraform}) {
      if (fedsplit::to_string(s) == item) {
        out.push_back(s);
        found = true;
      }
    }
    if (!found) {
      throw fedsplit::InvalidArgument("unknown strategy '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated client-selection simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Config file (INI)")->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", sets, "Override a config key: section.key=value");
  };

  auto* run = app.add_subcommand("run", "Run one strategy over every configured seed");
  add_common(run);

  auto* compare = app.add_subcommand("compare", "Run several strategies on identical data");
  add_common(compare);
  std::string strategies = "random,poc,oort,terraform";
  compare->add_option("--strategies", strategies, "Comma-separated strategy list");

  auto* ablate = app.add_subcommand("ablate", "Sweep one ablation axis");
  add_common(ablate);
  std::string axis;
  ablate->add_option("axis", axis, "update_signal | quartile_range | eta")
      ->required()
      ->check(CLI::IsMember({"update_signal", "quartile_range", "eta"}));

  auto* inspect = app.add_subcommand("inspect", "Pretty-print a splits CSV");
  std::string splits_path;
  inspect->add_option("file", splits_path, "splits_<seed>.csv")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inspect) {
      std::ifstream in(splits_path);
      fedsplit::inspect_splits(in, std::cout);
      return 0;
    }
    const auto cfg = resolve(config_path, sets);
    if (*run) {
      return fedsplit::run_cmd(cfg, std::cerr);
    }
    if (*compare) {
      const auto rows = fedsplit::compare_cmd(cfg, parse_strategies(strategies), std::cerr);
      for (const auto& r : rows) {
        if (!r.error.empty()) {
          return 1;
        }
      }
      return 0;
    }
    if (*ablate) {
      fedsplit::AblationAxis a = fedsplit::AblationAxis::eta;
      if (axis == "update_signal") {
        a = fedsplit::AblationAxis::update_signal;
      } else if (axis == "quartile_range") {
        a = fedsplit::AblationAxis::quartile_range;
      }
      const auto rows = fedsplit::ablation_cmd(a, cfg, std::cerr);
      for (const auto& r : rows) {
        if (!r.error.empty()) {
          return 1;
        }
      }
      return 0;
    }
  } catch (const fedsplit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
