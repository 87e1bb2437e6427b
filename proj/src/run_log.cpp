#include "aesrl/run_log.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aesrl/wire.hpp"

namespace aesrl {

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

RunLogWriter::RunLogWriter(std::ostream& jsonl, std::ostream* z_sidecar)
    : jsonl_(jsonl), z_(z_sidecar) {}

void RunLogWriter::header(const ConfigMap& map, const ExperimentConfig& cfg) {
  event({{"event", "header"},
         {"format", 1},
         {"config_hash", config_hash(map)},
         {"seed", cfg.seed},
         {"mode", to_string(cfg.mode)},
         {"config", canonical_text(map)}});
}

void RunLogWriter::event(const nlohmann::json& j) { jsonl_ << j.dump() << '\n'; }

std::uint64_t RunLogWriter::individual(const Vec& z) {
  if (z_) {
    const auto bytes = encode_params(z);
    z_->write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  return next_individual_++;
}

namespace {

/// Reads the sidecar's records in order.
class SidecarReader {
 public:
  explicit SidecarReader(const std::string& path) : in_(path, std::ios::binary) {}

  bool open() const { return static_cast<bool>(in_); }

  std::optional<Vec> read(std::uint64_t index) {
    if (index != next_) return std::nullopt;
    std::uint8_t head[4];
    if (!in_.read(reinterpret_cast<char*>(head), 4)) return std::nullopt;
    const std::uint32_t dim = static_cast<std::uint32_t>(head[0]) |
                              static_cast<std::uint32_t>(head[1]) << 8 |
                              static_cast<std::uint32_t>(head[2]) << 16 |
                              static_cast<std::uint32_t>(head[3]) << 24;
    std::vector<std::uint8_t> bytes(4 + static_cast<std::size_t>(dim) * 4);
    std::copy(head, head + 4, bytes.begin());
    if (!in_.read(reinterpret_cast<char*>(bytes.data() + 4),
                  static_cast<std::streamsize>(bytes.size() - 4)))
      return std::nullopt;
    ++next_;
    return decode_params(bytes);
  }

 private:
  std::ifstream in_;
  std::uint64_t next_ = 0;
};

[[noreturn]] void fail(std::uint64_t line, const std::string& what) {
  throw ReplayError("line " + std::to_string(line) + ": " + what);
}

template <class T>
T field(const nlohmann::json& j, const char* key, std::uint64_t line) {
  if (!j.contains(key)) fail(line, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(line, std::string("bad value for '") + key + "'");
  }
}

}  // namespace

ReplayResult replay_log(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path, std::ios::binary);
  if (!in) throw ReplayError("cannot open " + jsonl_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw ReplayError("line 1: empty log");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(lines[0]);
  } catch (const nlohmann::json::exception& e) {
    fail(1, std::string("unreadable header: ") + e.what());
  }
  if (field<std::string>(header, "event", 1) != "header") fail(1, "first line is not a header");

  ExperimentConfig cfg;
  try {
    cfg = config_from_map(parse_config_text(field<std::string>(header, "config", 1)));
  } catch (const ConfigError& e) {
    fail(1, std::string("header config: ") + e.what());
  }

  ReplayResult out;
  out.header_seed = field<std::uint64_t>(header, "seed", 1);
  out.header_hash = field<std::string>(header, "config_hash", 1);
  out.last_valid_line = 1;

  SidecarReader sidecar(jsonl_path + ".z");
  MeanRuleConfig mean = cfg.mean;
  std::optional<DistributionOwner> owner;
  PopulationDistribution dist0 = initial_distribution(cfg);
  auto ensure_owner = [&] {
    if (!owner)
      owner.emplace(dist0, mean, cfg.variance, cfg.population,
                    DistributionOwner::RefreshPolicy{cfg.refresh_cumulative_p, 0});
    return &*owner;
  };
  auto load_z = [&](std::uint64_t index, std::uint64_t line) {
    if (!sidecar.open()) fail(line, "parameter sidecar " + jsonl_path + ".z is missing");
    auto z = sidecar.read(index);
    if (!z) fail(line, "sidecar has no record " + std::to_string(index));
    return *z;
  };
  auto check_hash = [&](const nlohmann::json& j, std::uint64_t line) {
    const std::string h = mu_hash(owner->distribution().mu);
    if (h != field<std::string>(j, "mu_hash", line))
      fail(line, "replayed mean diverges from the logged one");
    out.mu_hashes.push_back(h);
  };

  std::vector<Individual> generation;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::uint64_t line = i + 1;
    if (lines[i].empty() && i + 1 == lines.size()) break;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      if (i + 1 == lines.size()) {
        out.truncated = true;
        break;
      }
      fail(line, std::string("corrupt event: ") + e.what());
    }
    const auto kind = field<std::string>(j, "event", line);
    if (kind == "calibration") {
      if (owner) fail(line, "calibration after the first update");
      mean.r = field<double>(j, "r", line);
    } else if (kind == "refresh") {
      ensure_owner()->set_fitness_mu(field<double>(j, "fitness_mu", line));
    } else if (kind == "update") {
      Individual ind;
      ind.z = load_z(field<std::uint64_t>(j, "individual", line), line);
      ind.fitness = field<double>(j, "fitness", line);
      ind.role = role_from_string(field<std::string>(j, "role", line));
      ind.steps = field<std::uint64_t>(j, "steps", line);
      ensure_owner()->update_with_ratio(ind, field<double>(j, "p", line));
      ++out.updates;
      check_hash(j, line);
    } else if (kind == "eval") {
      Individual ind;
      ind.z = load_z(field<std::uint64_t>(j, "individual", line), line);
      ind.fitness = field<double>(j, "fitness", line);
      ind.role = role_from_string(field<std::string>(j, "role", line));
      ind.steps = field<std::uint64_t>(j, "steps", line);
      generation.push_back(std::move(ind));
    } else if (kind == "generation") {
      if (field<std::uint64_t>(j, "count", line) != generation.size())
        fail(line, "generation size does not match its logged evaluations");
      if (field<std::uint64_t>(j, "generation", line) != out.generations)
        fail(line, "generation index out of sequence");
      ensure_owner()->update_generation(generation);
      generation.clear();
      ++out.updates;
      ++out.generations;
      check_hash(j, line);
    } else if (kind != "assign" && kind != "failure" && kind != "end" && kind != "test") {
      fail(line, "unknown event '" + kind + "'");
    }
    out.last_valid_line = line;
  }
  out.distribution = owner ? owner->distribution() : dist0;
  return out;
}

ArtifactPaths ArtifactPaths::for_run(const std::string& dir, const std::string& stem) {
  const std::filesystem::path base = std::filesystem::path(dir) / stem;
  ArtifactPaths p;
  p.jsonl = base.string() + ".jsonl";
  p.z_sidecar = p.jsonl + ".z";
  p.snapshot = base.string() + ".snapshot";
  p.curve_csv = base.string() + ".curve.csv";
  return p;
}

void write_curve_csv(std::ostream& out, const RunAccounting& acc, const std::string& hash,
                     std::uint64_t seed) {
  out << "# config_hash=" << hash << " seed=" << seed << '\n';
  out << "total_steps,best_fitness,mean_fitness\n";
  for (const auto& p : acc.curve)
    out << p.total_steps << ',' << format_double(p.best_fitness) << ','
        << format_double(p.mean_fitness) << '\n';
}

}  // namespace aesrl
