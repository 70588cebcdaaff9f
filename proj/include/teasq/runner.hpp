#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "teasq/config.hpp"
#include "teasq/sim.hpp"

namespace teasq {

// Column header of metrics.csv. Times in seconds, sizes in bits, accuracy as
// a fraction of the test set.
extern const char* const kMetricsHeader;

std::string metrics_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& text);

// Shortest text that reads back to the same double.
std::string format_double(double v);

// First record whose accuracy reaches `target`, if any.
std::optional<MetricsRecord> first_reaching(const std::vector<MetricsRecord>& records,
                                            double target);

// Best accuracy among records with sim_time_s <= budget.
double best_within(const std::vector<MetricsRecord>& records, double budget);

nlohmann::json summarize(const ExperimentConfig& cfg, const SimResult& result);

// A loaded config plus the schedule embedded in a run.json, when present.
struct RunInput {
  ExperimentConfig config;
  std::optional<CompressionSchedule> embedded_schedule;
};

// Reads a JSON config (or run.json), applies overrides in order and validates.
RunInput load_run_input(const std::optional<std::filesystem::path>& file,
                        const std::vector<std::pair<std::string, std::string>>& overrides);

struct RunOutput {
  SimResult result;
  CompressionSchedule schedule;
  std::optional<SearchResult> search;
  nlohmann::json summary;
};

// Builds the environment, resolves the schedule and simulates.
RunOutput execute(const RunInput& input, const SimHooks& hooks = {});

// execute() and write metrics.csv, run.json and summary.json into `dir`.
RunOutput run_to_directory(const RunInput& input, const std::filesystem::path& dir);

nlohmann::json search_to_json(const SearchResult& s);

// Warm-up probe, greedy search and schedule; writes schedule.json.
nlohmann::json tune_to_directory(const ExperimentConfig& cfg, const std::filesystem::path& dir);

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

// Parses "key=v1,v2,v3".
GridAxis parse_grid_axis(const std::string& text);

// One run directory per grid point plus index.csv. Precedence is
// command-line overrides over grid values over the file. A failing point is
// recorded in the index and the sweep continues. Returns the failure count.
int sweep_to_directory(const std::optional<std::filesystem::path>& file,
                       const std::vector<GridAxis>& grid,
                       const std::vector<std::pair<std::string, std::string>>& overrides,
                       const std::filesystem::path& dir);

// $TEASQ_OUT_DIR, or ./runs when unset.
std::filesystem::path default_out_dir();

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace teasq
