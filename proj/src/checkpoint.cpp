#include "evokg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "evokg/errors.hpp"

#ifndef EVOKG_VERSION
#define EVOKG_VERSION "unknown"
#endif

namespace evokg {
namespace {

constexpr char kMagic[8] = {'E', 'V', 'K', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    bytes(t.raw(), t.size() * sizeof(double));
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(std::span<const unsigned char> data, std::string source) : data_(data), source_(std::move(source)) {}

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw DataError(source_ + ": truncated checkpoint");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > data_.size() - pos_) throw DataError(source_ + ": truncated checkpoint");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Tensor tensor() {
    const std::uint64_t rank = u64();
    if (rank > 8) throw DataError(source_ + ": implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = u64();
      count *= d;
    }
    if (count * sizeof(double) > data_.size() - pos_) throw DataError(source_ + ": truncated tensor data");
    Tensor t(shape);
    bytes(t.raw(), t.size() * sizeof(double));
    return t;
  }

 private:
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t hash) {
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string dataset_fingerprint(const FactStore& store) {
  Writer w;
  w.u64(store.num_entities);
  w.u64(store.num_relations);
  for (Split split : {Split::kTrain, Split::kValid, Split::kTest}) {
    w.u64(static_cast<std::uint64_t>(split));
    for (const auto& f : store.facts(split)) {
      if (f.relation >= store.num_relations) continue;
      w.u64(f.subject);
      w.u64(f.relation);
      w.u64(f.object);
      w.u64(f.timestamp);
    }
  }
  return hex64(fnv1a64(w.buffer()));
}

std::string version_string() { return EVOKG_VERSION; }

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"dim", c.dim},
          {"layers", c.num_layers},
          {"history", c.history},
          {"gamma", c.gamma},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lr", c.lr},
          {"dropout", c.dropout},
          {"grad_clip", c.grad_clip},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"early_stopping", c.early_stopping},
          {"seed", c.seed},
          {"task", task_name(c.task)},
          {"static_constraint", c.static_constraint},
          {"time_gate", c.time_gate},
          {"kernels", c.num_kernels},
          {"kernel_width", c.kernel_width}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.dim = j.at("dim").get<std::size_t>();
    c.num_layers = j.at("layers").get<std::size_t>();
    c.history = j.at("history").get<std::size_t>();
    c.gamma = j.at("gamma").get<double>();
    c.lambda1 = j.at("lambda1").get<double>();
    c.lambda2 = j.at("lambda2").get<double>();
    c.lr = j.at("lr").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.early_stopping = j.at("early_stopping").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.task = parse_task(j.at("task").get<std::string>());
    c.static_constraint = j.at("static_constraint").get<bool>();
    c.time_gate = j.at("time_gate").get<bool>();
    c.num_kernels = j.at("kernels").get<std::size_t>();
    c.kernel_width = j.at("kernel_width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config record: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& optimizer,
                     const EvolutionState* final_state, const std::string& fingerprint) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  nlohmann::json header = {{"config", config_to_json(model.config)},
                           {"num_entities", model.evolution.num_entities},
                           {"num_relation_ids", model.evolution.num_relations},
                           {"has_static", model.has_static},
                           {"dataset_fingerprint", fingerprint},
                           {"version", version_string()}};
  const std::size_t nprops =
      model.has_static ? model.evolution.static_init.shape().at(0) - model.evolution.num_entities : 0;
  header["num_static_properties"] = nprops;
  w.str(header.dump());

  const auto params = named_parameters(model);
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.tensor(p.var.value());
  }

  w.u64(optimizer.step);
  w.f64(optimizer.beta1);
  w.f64(optimizer.beta2);
  w.f64(optimizer.eps);
  w.u64(optimizer.first_moment.size());
  for (const auto& [name, m1] : optimizer.first_moment) {
    w.str(name);
    w.tensor(m1);
    const auto it = optimizer.second_moment.find(name);
    w.tensor(it == optimizer.second_moment.end() ? Tensor(m1.shape()) : it->second);
  }

  w.u32(final_state != nullptr ? 1 : 0);
  if (final_state != nullptr) {
    w.tensor(final_state->entities.value());
    w.tensor(final_state->relations.value());
    w.u64(final_state->timestamp);
  }
  w.u64(fnv1a64(w.buffer()));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  const std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string src = path.string();
  if (data.size() < sizeof kMagic + 4 + 8 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(src + ": not a checkpoint (bad magic)");
  }
  const std::span<const unsigned char> body(data.data(), data.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body.size(), 8);
  if (fnv1a64(body) != stored) throw DataError(src + ": checksum mismatch, file is corrupt");

  Reader r(body, src);
  char magic[8];
  r.bytes(magic, sizeof magic);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) throw DataError(src + ": unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(src + ": bad header: " + e.what());
  }

  Checkpoint ck;
  const TrainConfig config = config_from_json(header.at("config"));
  ck.num_entities = header.at("num_entities").get<std::size_t>();
  ck.num_relation_ids = header.at("num_relation_ids").get<std::size_t>();
  ck.num_static_properties = header.at("num_static_properties").get<std::size_t>();
  ck.dataset_fingerprint = header.at("dataset_fingerprint").get<std::string>();
  std::optional<StaticGraph> shape_only;
  if (header.at("has_static").get<bool>()) {
    // Only the sizes matter for allocating the static parameters.
    shape_only.emplace();
    shape_only->num_entities = ck.num_entities;
    shape_only->properties.resize(ck.num_static_properties);
  }
  ck.model = init_model(config, ck.num_entities, ck.num_relation_ids, shape_only ? &*shape_only : nullptr);

  auto params = named_parameters(ck.model);
  const std::uint64_t count = r.u64();
  if (count != params.size()) {
    throw DataError(src + ": tensor table has " + std::to_string(count) + " entries, model expects " +
                    std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.str();
    Tensor t = r.tensor();
    if (name != p.name) throw DataError(src + ": expected tensor '" + p.name + "', found '" + name + "'");
    if (t.shape() != p.var.shape()) {
      throw DataError(src + ": tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                      shape_string(p.var.shape()));
    }
    p.var.mutable_value() = std::move(t);
  }

  ck.optimizer.step = r.u64();
  ck.optimizer.beta1 = r.f64();
  ck.optimizer.beta2 = r.f64();
  ck.optimizer.eps = r.f64();
  const std::uint64_t moments = r.u64();
  for (std::uint64_t i = 0; i < moments; ++i) {
    const std::string name = r.str();
    ck.optimizer.first_moment[name] = r.tensor();
    ck.optimizer.second_moment[name] = r.tensor();
  }

  if (r.u32() == 1) {
    EvolutionState s;
    s.entities = Var::constant(r.tensor());
    s.relations = Var::constant(r.tensor());
    s.timestamp = r.u64();
    if (s.entities.shape() != Shape{ck.num_entities, config.dim} ||
        s.relations.shape() != Shape{ck.num_relation_ids, config.dim}) {
      throw DataError(src + ": final state shape does not match the model");
    }
    ck.final_state = std::move(s);
  }
  return ck;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [phase, sec] : timings) t[phase] = sec;
  return {{"command", command},
          {"config", config_to_json(config)},
          {"seed", config.seed},
          {"dataset", dataset},
          {"dataset_fingerprint", dataset_fingerprint},
          {"version", version},
          {"timings", t},
          {"artifacts", artifacts},
          {"extra", extra}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = config_from_json(j.at("config"));
    m.dataset = j.at("dataset").get<std::string>();
    m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    m.version = j.at("version").get<std::string>();
    for (const auto& [phase, sec] : j.at("timings").items()) m.timings.emplace_back(phase, sec.get<double>());
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    if (j.contains("extra")) m.extra = j.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace evokg
