// Command-line experiment runner: run, sweep, tune, validate-config.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "teasq/errors.hpp"
#include "teasq/runner.hpp"

namespace fs = std::filesystem;
using Overrides = std::vector<std::pair<std::string, std::string>>;

namespace {

// Leftover "--section.key=value" or "--section.key value" arguments.
Overrides parse_overrides(const std::vector<std::string>& rest) {
  Overrides out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& a = rest[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3)
      throw teasq::ConfigError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= rest.size()) throw teasq::ConfigError("override '" + a + "' has no value");
      out.emplace_back(a.substr(2), rest[++i]);
    }
  }
  return out;
}

int report(const char* kind, const std::string& msg, int code) {
  nlohmann::json j{{"error", kind}, {"message", msg}};
  std::cerr << j.dump() << "\n";
  return code;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

fs::path out_dir_or(const std::string& given, const std::string& fallback) {
  if (!given.empty()) return given;
  return teasq::default_out_dir() / fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teasq: asynchronous federated learning simulator"};
  app.require_subcommand(1);

  std::string config_file, out_dir;
  std::vector<std::string> grid_specs;

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("-c,--config", config_file, "JSON config file (or a run.json)");
  run->add_option("-o,--out", out_dir, "output directory");
  run->allow_extras();

  auto* sweep = app.add_subcommand("sweep", "run a parameter grid");
  sweep->add_option("-c,--config", config_file, "JSON config file");
  sweep->add_option("-o,--out", out_dir, "output directory");
  sweep->add_option("-g,--grid", grid_specs, "axis as key=v1,v2,... (repeatable)")->required();
  sweep->allow_extras();

  auto* tune = app.add_subcommand("tune", "search compression parameters and write schedule.json");
  tune->add_option("-c,--config", config_file, "JSON config file");
  tune->add_option("-o,--out", out_dir, "output directory");
  tune->allow_extras();

  auto* validate = app.add_subcommand("validate-config", "check a config and print it resolved");
  validate->add_option("-c,--config", config_file, "JSON config file");
  validate->allow_extras();

  CLI11_PARSE(app, argc, argv);

  try {
    auto* sub = app.get_subcommands().front();
    const Overrides ov = parse_overrides(sub->remaining());
    if (sub == run) {
      auto input = teasq::load_run_input(opt_path(config_file), ov);
      const auto name = teasq::to_string(input.config.protocol.kind) + "-seed" +
                        std::to_string(input.config.seed);
      const auto dir = out_dir_or(out_dir, name);
      auto out = teasq::run_to_directory(input, dir);
      std::printf("%s: %lld rounds, %.6g s simulated, final accuracy %.4f\n", dir.string().c_str(),
                  static_cast<long long>(out.result.rounds), out.result.sim_time_s,
                  out.summary["final_accuracy"].get<double>());
    } else if (sub == sweep) {
      std::vector<teasq::GridAxis> grid;
      for (const auto& g : grid_specs) grid.push_back(teasq::parse_grid_axis(g));
      const auto dir = out_dir_or(out_dir, "sweep");
      const int failed = teasq::sweep_to_directory(opt_path(config_file), grid, ov, dir);
      std::printf("%s: index.csv written, %d failed point(s)\n", dir.string().c_str(), failed);
      return failed == 0 ? 0 : 1;
    } else if (sub == tune) {
      auto input = teasq::load_run_input(opt_path(config_file), ov);
      const auto dir = out_dir_or(out_dir, "tune-seed" + std::to_string(input.config.seed));
      auto j = teasq::tune_to_directory(input.config, dir);
      std::printf("%s: found p_s=%s p_q=%d\n", (dir / "schedule.json").string().c_str(),
                  teasq::format_double(j["search"]["found"]["p_s"].get<double>()).c_str(),
                  j["search"]["found"]["p_q"].get<int>());
    } else if (sub == validate) {
      auto input = teasq::load_run_input(opt_path(config_file), ov);
      std::cout << teasq::to_json(input.config).dump(2) << "\n";
    }
  } catch (const teasq::ConfigError& e) {
    return report("config", e.what(), 2);
  } catch (const teasq::FormatError& e) {
    return report("data", e.what(), 3);
  } catch (const teasq::PartitionError& e) {
    return report("partition", e.what(), 2);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), 1);
  }
  return 0;
}
