#include "teasq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>

#include "teasq/errors.hpp"
#include "teasq/rng.hpp"

namespace teasq {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "'", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& buf, std::size_t at, const std::string& what) {
  if (buf.size() < at + 4) throw FormatError(what + ": truncated header", buf.size());
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
         (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  const std::string iname = images.filename().string();
  const std::string lname = labels.filename().string();

  if (be32(img, 0, iname) != 0x00000803) throw FormatError(iname + ": bad image magic", 0);
  const std::uint32_t count = be32(img, 4, iname);
  const std::uint32_t rows = be32(img, 8, iname);
  const std::uint32_t cols = be32(img, 12, iname);
  const std::size_t dim = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * dim;
  if (img.size() < need) throw FormatError(iname + ": truncated pixel data", img.size());

  if (be32(lab, 0, lname) != 0x00000801) throw FormatError(lname + ": bad label magic", 0);
  const std::uint32_t lcount = be32(lab, 4, lname);
  if (lcount != count) throw FormatError(lname + ": label count differs from image count", 4);
  if (lab.size() < 8 + std::size_t{lcount}) throw FormatError(lname + ": truncated labels", lab.size());

  Dataset d;
  d.name = "fashion-mnist";
  d.split = split;
  d.input_dim = dim;
  d.features.resize(std::size_t{count} * dim);
  for (std::size_t i = 0; i < d.features.size(); ++i)
    d.features[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(count);
  std::uint32_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max<std::size_t>(10, max_label + 1);
  return d;
}

FashionMnist load_fashion_mnist(const std::filesystem::path& dir) {
  return {load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", Split::kTrain),
          load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", Split::kTest)};
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("TEASQ_DATA_DIR"); env && *env) return env;
  return "data";
}

TrainTest make_blobs(const BlobsSpec& spec) {
  if (spec.num_classes < 2 || spec.samples_per_class < 2 || spec.input_dim == 0 || spec.spread < 0.0)
    throw ConfigError("blobs need >= 2 classes, >= 2 samples per class and a positive dimension");
  if (spec.active_dims > spec.input_dim)
    throw ConfigError("blobs active_dims cannot exceed input_dim");
  Rng rng(derive_seed(spec.seed, {0xB10B}));
  const std::size_t D = spec.input_dim;
  const std::size_t A = spec.active_dims == 0 ? D : spec.active_dims;
  // Coordinates outside the active set stay at 0, like image background.
  std::vector<bool> active(D, A == D);
  if (A < D) {
    std::vector<std::size_t> order(D);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng pick(derive_seed(spec.seed, {0xAC71}));
    shuffle(std::span<std::size_t>(order), pick);
    for (std::size_t j = 0; j < A; ++j) active[order[j]] = true;
  }
  std::vector<double> centers(spec.num_classes * D, 0.0);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      if (!active[j]) continue;
      centers[c * D + j] = standard_normal(rng);
      norm += centers[c * D + j] * centers[c * D + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < D; ++j) centers[c * D + j] /= norm;
  }

  TrainTest out;
  for (auto* d : {&out.train, &out.test}) {
    d->name = "blobs";
    d->input_dim = D;
    d->num_classes = spec.num_classes;
  }
  out.train.split = Split::kTrain;
  out.test.split = Split::kTest;
  const std::size_t n_test = std::max<std::size_t>(1, spec.samples_per_class / 7);
  const std::size_t n_train = spec.samples_per_class - n_test;
  // Noise per coordinate scaled so the cluster radius is about `spread`.
  const double sigma = spec.spread / std::sqrt(static_cast<double>(A));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      Dataset& dst = s < n_train ? out.train : out.test;
      for (std::size_t j = 0; j < D; ++j) {
        if (!active[j]) {
          dst.features.push_back(0.0f);
          continue;
        }
        const double v = centers[c * D + j] + sigma * standard_normal(rng);
        dst.features.push_back(static_cast<float>(std::clamp(0.5 + 0.5 * v, 0.0, 1.0)));
      }
      dst.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return out;
}

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& a : assignments) n += a.size();
  return n;
}

Partition partition_iid(std::size_t num_samples, std::size_t num_devices, std::uint64_t seed) {
  if (num_devices == 0 || num_devices > num_samples)
    throw PartitionError("IID partition needs 1 <= N <= number of samples");
  std::vector<std::uint32_t> order(num_samples);
  std::iota(order.begin(), order.end(), std::uint32_t{0});
  Rng rng(derive_seed(seed, {0x11D}));
  shuffle(std::span<std::uint32_t>(order), rng);
  Partition p;
  p.assignments.resize(num_devices);
  const std::size_t base = num_samples / num_devices;
  const std::size_t extra = num_samples % num_devices;
  std::size_t at = 0;
  for (std::size_t k = 0; k < num_devices; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    p.assignments[k].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                            order.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return p;
}

Partition partition_noniid_shards(const Dataset& data, std::size_t num_devices,
                                  std::size_t classes_per_device, std::uint64_t seed) {
  const std::size_t C = data.num_classes;
  const std::size_t n = data.size();
  if (classes_per_device == 0 || classes_per_device > C)
    throw PartitionError("classes_per_device must lie in [1, num_classes]");
  if (num_devices == 0 || num_devices > n) throw PartitionError("need 1 <= N <= number of samples");
  const std::size_t quota = n / num_devices;

  std::vector<std::vector<std::uint32_t>> pools(C);
  for (std::uint32_t i = 0; i < n; ++i) pools[data.labels[i]].push_back(i);
  std::vector<std::size_t> nonempty;
  for (std::size_t c = 0; c < C; ++c)
    if (!pools[c].empty()) nonempty.push_back(c);
  if (nonempty.size() < classes_per_device)
    throw PartitionError("fewer populated classes than classes_per_device");

  // Deal class slots in proportion to class size (largest remainder).
  const std::size_t total_slots = num_devices * classes_per_device;
  std::vector<std::size_t> slots(C, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t dealt = 0;
  for (auto c : nonempty) {
    const double exact = static_cast<double>(total_slots) * static_cast<double>(pools[c].size()) /
                         static_cast<double>(n);
    slots[c] = static_cast<std::size_t>(std::floor(exact));
    dealt += slots[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; dealt < total_slots; ++i, ++dealt) ++slots[remainders[i % remainders.size()].second];

  std::vector<std::size_t> deck;
  deck.reserve(total_slots);
  for (std::size_t c = 0; c < C; ++c) deck.insert(deck.end(), slots[c], c);
  Rng rng(derive_seed(seed, {0x2C1A55}));
  shuffle(std::span<std::size_t>(deck), rng);

  // Repair hands that drew the same class twice by swapping with another hand.
  const std::size_t m = classes_per_device;
  auto hand_has = [&](std::size_t dev, std::size_t cls, std::size_t skip) {
    for (std::size_t j = 0; j < m; ++j)
      if (j != skip && deck[dev * m + j] == cls) return true;
    return false;
  };
  for (std::size_t dev = 0; dev < num_devices; ++dev) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t at = dev * m + j;
      if (!hand_has(dev, deck[at], j)) continue;
      bool fixed = false;
      for (std::size_t off = 1; off < total_slots && !fixed; ++off) {
        const std::size_t other = (at + off) % total_slots;
        const std::size_t odev = other / m;
        if (odev == dev) continue;
        if (hand_has(dev, deck[other], j) || hand_has(odev, deck[at], other % m)) continue;
        std::swap(deck[at], deck[other]);
        fixed = true;
      }
      if (!fixed) throw PartitionError("cannot give every device distinct classes");
    }
  }

  // Split each device's quota across its classes; check class capacity.
  std::vector<std::size_t> demand(C, 0);
  std::vector<std::size_t> take(total_slots, 0);
  for (std::size_t dev = 0; dev < num_devices; ++dev)
    for (std::size_t j = 0; j < m; ++j) {
      take[dev * m + j] = quota / m + (j < quota % m ? 1 : 0);
      demand[deck[dev * m + j]] += take[dev * m + j];
    }
  for (std::size_t c = 0; c < C; ++c)
    if (demand[c] > pools[c].size())
      throw PartitionError("class " + std::to_string(c) + " cannot supply its " +
                           std::to_string(demand[c]) + " requested samples");

  for (auto& pool : pools) shuffle(std::span<std::uint32_t>(pool), rng);
  std::vector<std::size_t> cursor(C, 0);
  Partition p;
  p.assignments.resize(num_devices);
  for (std::size_t dev = 0; dev < num_devices; ++dev) {
    auto& a = p.assignments[dev];
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t c = deck[dev * m + j];
      for (std::size_t s = 0; s < take[dev * m + j]; ++s) a.push_back(pools[c][cursor[c]++]);
    }
    std::sort(a.begin(), a.end());
  }
  return p;
}

std::vector<std::vector<double>> label_distributions(const Dataset& data, const Partition& p) {
  std::vector<std::vector<double>> out;
  out.reserve(p.num_devices());
  for (const auto& a : p.assignments) {
    std::vector<double> h(data.num_classes, 0.0);
    for (auto i : a) h[data.labels[i]] += 1.0;
    for (auto& v : h) v /= static_cast<double>(std::max<std::size_t>(1, a.size()));
    out.push_back(std::move(h));
  }
  return out;
}

double mean_pairwise_tv(const Dataset& data, const Partition& p) {
  const auto dist = label_distributions(data, p);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < dist.size(); ++i)
    for (std::size_t j = i + 1; j < dist.size(); ++j, ++pairs) {
      double tv = 0.0;
      for (std::size_t c = 0; c < dist[i].size(); ++c) tv += std::fabs(dist[i][c] - dist[j][c]);
      sum += 0.5 * tv;
    }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

}  // namespace teasq
