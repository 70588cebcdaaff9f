#include "teasq/runner.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "teasq/errors.hpp"

namespace teasq {

using nlohmann::json;
namespace fs = std::filesystem;

const char* const kMetricsHeader =
    "round,sim_time_s,accuracy,cumulative_down_bits,cumulative_up_bits,cache_mean_staleness,"
    "p_s_used,p_q_used,checkpoint";

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.round) + ',' + format_double(r.sim_time_s) + ',' +
           format_double(r.accuracy) + ',' + std::to_string(r.cumulative_down_bits) + ',' +
           std::to_string(r.cumulative_up_bits) + ',' + format_double(r.cache_mean_staleness) +
           ',' + format_double(r.p_s_used) + ',' + std::to_string(r.p_q_used) + ',' +
           (r.checkpoint ? "1" : "0") + '\n';
  }
  return out;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw ConfigError("metrics.csv header does not match");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw ConfigError("metrics.csv row has " + std::to_string(f.size()) + " fields");
    MetricsRecord r;
    r.round = std::stoll(f[0]);
    r.sim_time_s = std::stod(f[1]);
    r.accuracy = std::stod(f[2]);
    r.cumulative_down_bits = std::stoll(f[3]);
    r.cumulative_up_bits = std::stoll(f[4]);
    r.cache_mean_staleness = std::stod(f[5]);
    r.p_s_used = std::stod(f[6]);
    r.p_q_used = std::stoi(f[7]);
    r.checkpoint = f[8] == "1";
    out.push_back(r);
  }
  return out;
}

std::optional<MetricsRecord> first_reaching(const std::vector<MetricsRecord>& records,
                                            double target) {
  for (const auto& r : records)
    if (r.accuracy >= target) return r;
  return std::nullopt;
}

double best_within(const std::vector<MetricsRecord>& records, double budget) {
  double best = 0.0;
  for (const auto& r : records)
    if (r.sim_time_s <= budget) best = std::max(best, r.accuracy);
  return best;
}

json summarize(const ExperimentConfig& cfg, const SimResult& result) {
  const auto& recs = result.records;
  json s;
  s["protocol"] = to_string(cfg.protocol.kind);
  s["seed"] = cfg.seed;
  s["rounds"] = result.rounds;
  s["final_sim_time_s"] = result.sim_time_s;
  s["final_accuracy"] = recs.empty() ? 0.0 : recs.back().accuracy;
  double best = 0.0;
  for (const auto& r : recs) best = std::max(best, r.accuracy);
  s["best_accuracy"] = best;

  json ttt = json::array();
  for (double target : cfg.targets) {
    auto hit = first_reaching(recs, target);
    json row{{"target", target}};
    row["time_s"] = hit ? json(hit->sim_time_s) : json(nullptr);
    row["round"] = hit ? json(hit->round) : json(nullptr);
    ttt.push_back(row);
  }
  s["time_to_target"] = ttt;

  json bwb = json::array();
  for (double b : cfg.budgets_s) bwb.push_back({{"budget_s", b}, {"best_accuracy", best_within(recs, b)}});
  s["best_accuracy_within_budget"] = bwb;

  s["transfer"] = {{"up_bits", result.up_bits},
                   {"down_bits", result.down_bits},
                   {"up_bytes", result.up_bits / 8},
                   {"down_bytes", result.down_bits / 8},
                   {"total_bytes", (result.up_bits + result.down_bits) / 8}};
  if (!result.staleness.empty()) {
    std::int64_t mx = 0;
    double sum = 0.0;
    for (auto v : result.staleness) {
      mx = std::max(mx, v);
      sum += static_cast<double>(v);
    }
    s["staleness"] = {{"max", mx}, {"mean", sum / static_cast<double>(result.staleness.size())}};
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunInput load_run_input(const std::optional<fs::path>& file,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  json doc = json::object();
  std::optional<CompressionSchedule> embedded;
  if (file) {
    try {
      doc = json::parse(read_text(*file));
    } catch (const json::parse_error& e) {
      throw ConfigError(file->string() + ": " + e.what());
    }
    if (doc.is_object() && doc.contains("config")) {
      if (doc.contains("schedule") && doc["schedule"].is_object() &&
          doc["schedule"].contains("rounds") && !doc["schedule"]["rounds"].empty())
        embedded = schedule_from_json(doc["schedule"]);
      doc = doc["config"];
    }
  }
  for (const auto& [k, v] : overrides) apply_override(doc, k, v);
  RunInput in{config_from_json(doc), std::nullopt};
  // A run.json replays its recorded schedule instead of the file it came from.
  if (embedded && in.config.compression.mode == CompressionMode::kScheduleFile &&
      !fs::exists(in.config.compression.schedule_file))
    in.embedded_schedule = embedded;
  in.config.validate();
  return in;
}

RunOutput execute(const RunInput& input, const SimHooks& hooks) {
  const auto& cfg = input.config;
  cfg.validate();
  auto env = SimEnvironment::build(cfg);
  RunOutput out;
  SearchResult search;
  if (input.embedded_schedule && cfg.protocol.kind != ProtocolKind::kTea) {
    out.schedule = *input.embedded_schedule;
  } else {
    out.schedule = resolve_schedule(cfg, env, &search);
    if (cfg.compression.mode == CompressionMode::kAutoTune && cfg.protocol.kind != ProtocolKind::kTea)
      out.search = search;
  }
  out.result = simulate(cfg, env, out.schedule, hooks);
  out.summary = summarize(cfg, out.result);
  return out;
}

json search_to_json(const SearchResult& s) {
  json ev = json::array();
  for (const auto& e : s.evaluated)
    ev.push_back({{"p_s", e.params.p_s}, {"p_q", e.params.p_q}, {"accuracy", e.accuracy},
                  {"feasible", e.feasible}});
  json path = json::array();
  for (const auto& p : s.path) path.push_back({{"p_s", p.p_s}, {"p_q", p.p_q}});
  return {{"found", {{"p_s", s.found.p_s}, {"p_q", s.found.p_q}}},
          {"baseline_accuracy", s.baseline_accuracy},
          {"found_accuracy", s.found_accuracy},
          {"fell_back_to_lossless", s.fell_back_to_lossless},
          {"evaluated", ev},
          {"path", path}};
}

namespace {

json environment_json(const ExperimentConfig& cfg) {
  json e;
  e["program"] = "teasq";
  e["version"] = "0.1.0";
#if defined(__VERSION__)
  e["compiler"] = __VERSION__;
#endif
  if (cfg.dataset.kind == "fashion-mnist")
    e["data_dir"] = cfg.dataset.dir.empty() ? default_data_dir().string() : cfg.dataset.dir;
  return e;
}

}  // namespace

RunOutput run_to_directory(const RunInput& input, const fs::path& dir) {
  auto out = execute(input);
  fs::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(out.result.records));
  json run;
  run["config"] = to_json(input.config);
  run["environment"] = environment_json(input.config);
  run["schedule"] = schedule_to_json(out.schedule);
  if (out.search) run["search"] = search_to_json(*out.search);
  write_text(dir / "run.json", run.dump(2) + "\n");
  write_text(dir / "summary.json", out.summary.dump(2) + "\n");
  return out;
}

json tune_to_directory(const ExperimentConfig& cfg_in, const fs::path& dir) {
  ExperimentConfig cfg = cfg_in;
  cfg.compression.mode = CompressionMode::kAutoTune;
  if (cfg.protocol.kind == ProtocolKind::kTea) cfg.protocol.kind = ProtocolKind::kTeasq;
  cfg.validate();
  auto env = SimEnvironment::build(cfg);
  SearchResult search;
  auto schedule = resolve_schedule(cfg, env, &search);
  json j = schedule_to_json(schedule);
  j["search"] = search_to_json(search);
  j["sets"] = to_json(cfg)["compression"];
  fs::create_directories(dir);
  write_text(dir / "schedule.json", j.dump(2) + "\n");
  return j;
}

GridAxis parse_grid_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= text.size())
    throw ConfigError("grid axis must look like key=v1,v2,...: '" + text + "'");
  GridAxis a;
  a.key = text.substr(0, eq);
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (v.empty()) throw ConfigError("empty value in grid axis '" + text + "'");
    a.values.push_back(v);
  }
  return a;
}

int sweep_to_directory(const std::optional<fs::path>& file, const std::vector<GridAxis>& grid,
                       const std::vector<std::pair<std::string, std::string>>& overrides,
                       const fs::path& dir) {
  if (grid.empty()) throw ConfigError("sweep needs at least one grid axis");
  for (const auto& a : grid)
    if (a.values.empty()) throw ConfigError("grid axis '" + a.key + "' has no values");

  std::size_t points = 1;
  for (const auto& a : grid) points *= a.values.size();

  std::string index = "run_id";
  for (const auto& a : grid) index += "," + a.key;
  index += ",status,rounds,final_sim_time_s,final_accuracy,best_accuracy,up_bits,down_bits,error\n";

  int failures = 0;
  fs::create_directories(dir);
  for (std::size_t p = 0; p < points; ++p) {
    std::vector<std::pair<std::string, std::string>> ov;
    std::size_t rem = p;
    std::vector<std::string> chosen(grid.size());
    for (std::size_t a = grid.size(); a-- > 0;) {
      chosen[a] = grid[a].values[rem % grid[a].values.size()];
      rem /= grid[a].values.size();
    }
    for (std::size_t a = 0; a < grid.size(); ++a) ov.emplace_back(grid[a].key, chosen[a]);
    ov.insert(ov.end(), overrides.begin(), overrides.end());

    char id[32];
    std::snprintf(id, sizeof id, "run-%03zu", p);
    std::string row = id;
    for (const auto& v : chosen) row += "," + v;
    try {
      auto input = load_run_input(file, ov);
      auto out = run_to_directory(input, dir / id);
      const auto& s = out.summary;
      row += ",ok," + std::to_string(out.result.rounds) + "," +
             format_double(out.result.sim_time_s) + "," +
             format_double(s["final_accuracy"].get<double>()) + "," +
             format_double(s["best_accuracy"].get<double>()) + "," +
             std::to_string(out.result.up_bits) + "," + std::to_string(out.result.down_bits) + ",";
    } catch (const std::exception& e) {
      ++failures;
      std::string msg = e.what();
      for (auto& c : msg)
        if (c == ',' || c == '\n' || c == '"') c = ' ';
      row += ",failed,,,,,,," + msg;
      fs::create_directories(dir / id);
      write_text(dir / id / "error.txt", std::string(e.what()) + "\n");
    }
    index += row + "\n";
  }
  write_text(dir / "index.csv", index);
  return failures;
}

fs::path default_out_dir() {
  if (const char* v = std::getenv("TEASQ_OUT_DIR"); v && *v) return v;
  return "runs";
}

}  // namespace teasq
