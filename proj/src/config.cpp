#include "teasq/config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "teasq/errors.hpp"

namespace teasq {

using nlohmann::json;

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::kTeasq: return "teasq";
    case ProtocolKind::kTea: return "tea";
    case ProtocolKind::kTeaStatic: return "teastatic";
    case ProtocolKind::kFedAvg: return "fedavg";
    case ProtocolKind::kFedAsync: return "fedasync";
  }
  return "unknown";
}

ProtocolKind protocol_from_string(const std::string& s) {
  if (s == "teasq") return ProtocolKind::kTeasq;
  if (s == "tea") return ProtocolKind::kTea;
  if (s == "teastatic") return ProtocolKind::kTeaStatic;
  if (s == "fedavg") return ProtocolKind::kFedAvg;
  if (s == "fedasync") return ProtocolKind::kFedAsync;
  throw ConfigError("unknown protocol '" + s + "' (teasq, tea, teastatic, fedavg, fedasync)");
}

namespace {

std::string to_string(CompressionMode m) {
  switch (m) {
    case CompressionMode::kNone: return "none";
    case CompressionMode::kStatic: return "static";
    case CompressionMode::kScheduleFile: return "schedule-file";
    case CompressionMode::kAutoTune: return "auto-tune";
  }
  return "none";
}

CompressionMode mode_from_string(const std::string& s) {
  if (s == "none") return CompressionMode::kNone;
  if (s == "static") return CompressionMode::kStatic;
  if (s == "schedule-file") return CompressionMode::kScheduleFile;
  if (s == "auto-tune") return CompressionMode::kAutoTune;
  throw ConfigError("unknown compression mode '" + s + "' (none, static, schedule-file, auto-tune)");
}

// Reads fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown key '" + prefix() + it.key() + "'");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + prefix() + key + "' has the wrong type");
    }
  }

  const json* sub(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string prefix() const { return where_.empty() ? "" : where_ + "."; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

}  // namespace

void ExperimentConfig::validate() const {
  if (N < 1) throw ConfigError("N must be at least 1");
  if (!(C > 0.0 && C <= 1.0)) throw ConfigError("C must lie in (0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(mu >= 0.0)) throw ConfigError("mu must be nonnegative");
  if (!(a_staleness > 0.0)) throw ConfigError("a_staleness must be positive");
  if (E < 1) throw ConfigError("E must be at least 1");
  if (B < 1) throw ConfigError("B must be at least 1");
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  if (T < 1) throw ConfigError("T must be at least 1");
  if (!(time_budget_s >= 0.0)) throw ConfigError("time_budget_s must be nonnegative");
  if (!(eval_interval_s >= 0.0)) throw ConfigError("eval_interval_s must be nonnegative");
  if (!(retry_interval_s >= 0.0)) throw ConfigError("retry_interval_s must be nonnegative");
  if (protocol.kind == ProtocolKind::kFedAvg &&
      (protocol.fedavg_devices < 1 || protocol.fedavg_devices > N))
    throw ConfigError("protocol.fedavg_devices must lie in [1, N]");
  if (protocol.kind == ProtocolKind::kFedAsync && protocol.max_staleness < 1)
    throw ConfigError("protocol.max_staleness must be at least 1");
  if (dataset.kind != "blobs" && dataset.kind != "fashion-mnist")
    throw ConfigError("dataset.kind must be blobs or fashion-mnist");
  if (partition.classes_per_device < 1) throw ConfigError("partition.classes_per_device must be positive");
  if (!(compute.a_min > 0.0 && compute.a_max >= compute.a_min))
    throw ConfigError("compute.a_min/a_max must satisfy 0 < a_min <= a_max");
  if (!(compute.phi_min > 0.0 && compute.phi_max >= compute.phi_min))
    throw ConfigError("compute.phi_min/phi_max must satisfy 0 < phi_min <= phi_max");
  channel.validate();
  if (model.architecture == Architecture::kMlp && model.hidden_width == 0)
    throw ConfigError("model.hidden_width must be positive for mlp-1-hidden");
  switch (compression.mode) {
    case CompressionMode::kStatic: compression.static_params.validate(); break;
    case CompressionMode::kScheduleFile:
      if (compression.schedule_file.empty())
        throw ConfigError("compression.schedule_file is required in schedule-file mode");
      break;
    case CompressionMode::kAutoTune:
      compression.sets.validate();
      if (compression.probe_rounds < 1) throw ConfigError("compression.probe_rounds must be positive");
      break;
    case CompressionMode::kNone: break;
  }
  const bool compressed_protocol =
      protocol.kind == ProtocolKind::kTeasq || protocol.kind == ProtocolKind::kTeaStatic;
  if (compressed_protocol && compression.mode == CompressionMode::kNone)
    throw ConfigError(to_string(protocol.kind) + " needs a compression mode other than none");
  for (double t : targets)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("targets must lie in [0, 1]");
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["protocol"] = {{"kind", to_string(c.protocol.kind)},
                   {"fedavg_devices", c.protocol.fedavg_devices},
                   {"max_staleness", c.protocol.max_staleness}};
  j["N"] = c.N;
  j["C"] = c.C;
  j["gamma"] = c.gamma;
  j["alpha"] = c.alpha;
  j["mu"] = c.mu;
  j["a_staleness"] = c.a_staleness;
  j["E"] = c.E;
  j["B"] = c.B;
  j["eta"] = c.eta;
  j["T"] = c.T;
  j["time_budget_s"] = c.time_budget_s;
  j["model"] = {{"architecture", to_string(c.model.architecture)},
                {"hidden_width", c.model.hidden_width},
                {"conv1_channels", c.model.conv1_channels},
                {"conv2_channels", c.model.conv2_channels}};
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"num_classes", c.dataset.blobs.num_classes},
                  {"samples_per_class", c.dataset.blobs.samples_per_class},
                  {"input_dim", c.dataset.blobs.input_dim},
                  {"spread", c.dataset.blobs.spread},
                  {"seed", c.dataset.blobs.seed},
                  {"active_dims", c.dataset.blobs.active_dims},
                  {"dir", c.dataset.dir}};
  j["partition"] = {{"kind", c.partition.kind == PartitionKind::kIid ? "iid" : "noniid"},
                    {"classes_per_device", c.partition.classes_per_device}};
  j["channel"] = {{"bandwidth_hz", c.channel.bandwidth_hz},
                  {"pathloss_exp", c.channel.pathloss_exp},
                  {"p_bs_dbm", c.channel.p_bs_dbm},
                  {"p_dev_dbm", c.channel.p_dev_dbm},
                  {"noise_dbm_per_mhz", c.channel.noise_dbm_per_mhz},
                  {"radius_m", c.channel.radius_m}};
  j["compute"] = {{"a_min", c.compute.a_min},
                  {"a_max", c.compute.a_max},
                  {"phi_min", c.compute.phi_min},
                  {"phi_max", c.compute.phi_max}};
  const auto& cs = c.compression.sets;
  j["compression"] = {{"mode", to_string(c.compression.mode)},
                      {"p_s", c.compression.static_params.p_s},
                      {"p_q", c.compression.static_params.p_q},
                      {"schedule_file", c.compression.schedule_file},
                      {"set_s", cs.set_s},
                      {"set_q", cs.set_q},
                      {"theta", cs.theta},
                      {"step_size", cs.step_size},
                      {"endpoint", cs.endpoint == DecayEndpoint::kFound ? "found" : "lossless"},
                      {"probe_rounds", c.compression.probe_rounds}};
  j["seed"] = c.seed;
  j["eval_interval_s"] = c.eval_interval_s;
  j["retry_interval_s"] = c.retry_interval_s;
  j["targets"] = c.targets;
  j["budgets_s"] = c.budgets_s;
  return j;
}

ExperimentConfig config_from_json(const json& doc) {
  const json& j = (doc.is_object() && doc.contains("config") && doc["config"].is_object()) ? doc["config"] : doc;
  ExperimentConfig c;
  ObjectReader r(j, "");
  if (doc.is_object() && &j != &doc) {
    // run.json: the other top-level sections are informational.
  }
  if (const json* p = r.sub("protocol")) {
    ObjectReader pr(*p, "protocol");
    std::string kind = to_string(c.protocol.kind);
    pr.get("kind", kind);
    c.protocol.kind = protocol_from_string(kind);
    pr.get("fedavg_devices", c.protocol.fedavg_devices);
    pr.get("max_staleness", c.protocol.max_staleness);
  }
  r.get("N", c.N);
  r.get("C", c.C);
  r.get("gamma", c.gamma);
  r.get("alpha", c.alpha);
  r.get("mu", c.mu);
  r.get("a_staleness", c.a_staleness);
  r.get("E", c.E);
  r.get("B", c.B);
  r.get("eta", c.eta);
  r.get("T", c.T);
  r.get("time_budget_s", c.time_budget_s);
  if (const json* m = r.sub("model")) {
    ObjectReader mr(*m, "model");
    std::string arch = to_string(c.model.architecture);
    mr.get("architecture", arch);
    c.model.architecture = architecture_from_string(arch);
    mr.get("hidden_width", c.model.hidden_width);
    mr.get("conv1_channels", c.model.conv1_channels);
    mr.get("conv2_channels", c.model.conv2_channels);
  }
  if (const json* d = r.sub("dataset")) {
    ObjectReader dr(*d, "dataset");
    dr.get("kind", c.dataset.kind);
    dr.get("num_classes", c.dataset.blobs.num_classes);
    dr.get("samples_per_class", c.dataset.blobs.samples_per_class);
    dr.get("input_dim", c.dataset.blobs.input_dim);
    dr.get("spread", c.dataset.blobs.spread);
    dr.get("seed", c.dataset.blobs.seed);
    dr.get("active_dims", c.dataset.blobs.active_dims);
    dr.get("dir", c.dataset.dir);
  }
  if (const json* p = r.sub("partition")) {
    ObjectReader pr(*p, "partition");
    std::string kind = "noniid";
    pr.get("kind", kind);
    if (kind == "iid")
      c.partition.kind = PartitionKind::kIid;
    else if (kind == "noniid" || kind == "noniid2")
      c.partition.kind = PartitionKind::kNonIid;
    else
      throw ConfigError("partition.kind must be iid or noniid");
    pr.get("classes_per_device", c.partition.classes_per_device);
  }
  if (const json* ch = r.sub("channel")) {
    ObjectReader cr(*ch, "channel");
    cr.get("bandwidth_hz", c.channel.bandwidth_hz);
    cr.get("pathloss_exp", c.channel.pathloss_exp);
    cr.get("p_bs_dbm", c.channel.p_bs_dbm);
    cr.get("p_dev_dbm", c.channel.p_dev_dbm);
    cr.get("noise_dbm_per_mhz", c.channel.noise_dbm_per_mhz);
    cr.get("radius_m", c.channel.radius_m);
  }
  if (const json* cp = r.sub("compute")) {
    ObjectReader cr(*cp, "compute");
    cr.get("a_min", c.compute.a_min);
    cr.get("a_max", c.compute.a_max);
    cr.get("phi_min", c.compute.phi_min);
    cr.get("phi_max", c.compute.phi_max);
  }
  if (const json* cm = r.sub("compression")) {
    ObjectReader cr(*cm, "compression");
    std::string mode = to_string(c.compression.mode);
    cr.get("mode", mode);
    c.compression.mode = mode_from_string(mode);
    cr.get("p_s", c.compression.static_params.p_s);
    cr.get("p_q", c.compression.static_params.p_q);
    cr.get("schedule_file", c.compression.schedule_file);
    cr.get("set_s", c.compression.sets.set_s);
    cr.get("set_q", c.compression.sets.set_q);
    cr.get("theta", c.compression.sets.theta);
    cr.get("step_size", c.compression.sets.step_size);
    std::string endpoint = "found";
    cr.get("endpoint", endpoint);
    if (endpoint == "found")
      c.compression.sets.endpoint = DecayEndpoint::kFound;
    else if (endpoint == "lossless")
      c.compression.sets.endpoint = DecayEndpoint::kLossless;
    else
      throw ConfigError("compression.endpoint must be found or lossless");
    cr.get("probe_rounds", c.compression.probe_rounds);
  }
  r.get("seed", c.seed);
  r.get("eval_interval_s", c.eval_interval_s);
  r.get("retry_interval_s", c.retry_interval_s);
  r.get("targets", c.targets);
  r.get("budgets_s", c.budgets_s);
  c.compression.sets.T = c.T;
  return c;
}

void apply_override(json& doc, const std::string& path, const std::string& value) {
  static const std::pair<const char*, const char*> kAliases[] = {
      {"protocol", "protocol.kind"},
      {"compression", "compression.mode"},
      {"partition", "partition.kind"},
      {"dataset", "dataset.kind"},
      {"model", "model.architecture"}};
  std::string key = path;
  for (const auto& [alias, target] : kAliases)
    if (key == alias) key = target;
  if (key.empty()) throw ConfigError("empty override key");

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    node = &next;
  }
  (*node)[parts.back()] = parsed;
}

json schedule_to_json(const CompressionSchedule& s) {
  json rounds = json::array();
  for (const auto& p : s.per_round) rounds.push_back({{"p_s", p.p_s}, {"p_q", p.p_q}});
  return {{"rounds", rounds}};
}

CompressionSchedule schedule_from_json(const json& j) {
  const json& rounds = j.contains("rounds") ? j["rounds"] : (j.contains("schedule") ? j["schedule"]["rounds"] : j);
  if (!rounds.is_array() || rounds.empty()) throw ConfigError("schedule must hold a non-empty rounds array");
  CompressionSchedule s;
  for (const auto& r : rounds) {
    CompressionParams p;
    try {
      p.p_s = r.at("p_s").get<double>();
      p.p_q = r.at("p_q").get<int>();
    } catch (const json::exception&) {
      throw ConfigError("schedule entries need numeric p_s and p_q");
    }
    p.validate();
    s.per_round.push_back(p);
  }
  return s;
}

}  // namespace teasq
