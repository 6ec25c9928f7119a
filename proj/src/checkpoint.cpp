#include "elegant/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace elegant {
inline namespace ELEGANT_ABI {
namespace fs = std::filesystem;
namespace {

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

constexpr const char* kNetworkFiles[] = {"encoder", "decoder", "discriminator_1", "discriminator_2"};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string archive) : bytes_(bytes), archive_(std::move(archive)) {}

  template <typename T>
  T get(const std::string& context) {
    need(sizeof(T), context);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n, const std::string& context) {
    need(n, context);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_into(real* dst, std::size_t count, const std::string& context) {
    need(count * sizeof(float), context);
    for (std::size_t k = 0; k < count; ++k) {
      float f;
      std::memcpy(&f, bytes_.data() + pos_ + k * sizeof(float), sizeof(float));
      dst[k] = static_cast<real>(f);
    }
    pos_ += count * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const std::string& context) {
    if (bytes_.size() - pos_ < n)
      throw LoadError("archive " + archive_ + " truncated while reading " + context);
  }
  const std::string& bytes_;
  std::string archive_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing checkpoint artifact " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::pair<std::string, const Tensor*>> values_of(const ParameterSet& params) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& p : params) out.emplace_back(p.name, &p.value);
  return out;
}

void assign_values(ParameterSet& params, const NamedTensors& tensors, const std::string& archive) {
  if (tensors.size() != params.size())
    throw LoadError("archive " + archive + " holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  for (const auto& [name, t] : tensors) {
    Parameter* p = params.find(name);
    if (!p) throw LoadError("archive " + archive + ": unexpected tensor " + name);
    if (!p->value.same_shape(t))
      throw LoadError("archive " + archive + ": tensor " + name + " has shape " + shape_string(t.shape()) +
                      ", model expects " + shape_string(p->value.shape()));
    p->value = t;
  }
  for (const auto& p : params) {
    bool found = false;
    for (const auto& nt : tensors) found = found || nt.first == p.name;
    if (!found) throw LoadError("archive " + archive + ": missing tensor " + p.name);
  }
}

nlohmann::json sampler_to_json(const SamplerState& s) {
  auto pools = [](const std::vector<SamplerState::Pool>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) a.push_back({{"order", p.order}, {"cursor", p.cursor}});
    return a;
  };
  return {{"rng", s.rng}, {"positives", pools(s.positives)}, {"negatives", pools(s.negatives)}};
}

SamplerState sampler_from_json(const nlohmann::json& j) {
  SamplerState s;
  s.rng = j.at("rng").get<std::string>();
  auto pools = [](const nlohmann::json& a) {
    std::vector<SamplerState::Pool> v;
    for (const auto& p : a) v.push_back({p.at("order").get<std::vector<std::size_t>>(), p.at("cursor").get<std::size_t>()});
    return v;
  };
  s.positives = pools(j.at("positives"));
  s.negatives = pools(j.at("negatives"));
  return s;
}

CheckpointManifest read_manifest(const fs::path& dir) {
  const std::string text = read_file(dir / "manifest.json");
  CheckpointManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kCheckpointFormatVersion)
      throw LoadError("manifest.json: format_version " + std::to_string(m.format_version) + " unsupported (expected " +
                      std::to_string(kCheckpointFormatVersion) + ")");
    m.model_config = model_config_from_json(j.at("model_config"));
    m.attribute_names = j.at("attribute_names").get<std::vector<std::string>>();
    m.iteration = j.at("iteration").get<std::int64_t>();
    m.loss_history_path = j.at("loss_history_path").get<std::string>();
    if (j.contains("checksums")) m.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("manifest.json: ") + e.what());
  }
  if (static_cast<int>(m.attribute_names.size()) != m.model_config.n_attributes)
    throw LoadError("manifest.json: " + std::to_string(m.attribute_names.size()) + " attribute names but model has " +
                    std::to_string(m.model_config.n_attributes) + " latent parts");
  return m;
}

// Reads and checksum-verifies an archive file.
std::string read_verified(const fs::path& dir, const std::string& file, const CheckpointManifest& m) {
  std::string bytes = read_file(dir / file);
  auto it = m.checksums.find(file);
  if (it != m.checksums.end() && it->second != fnv1a_hex(bytes))
    throw LoadError("checksum mismatch for " + file);
  return bytes;
}

std::string fingerprint_of(const std::vector<std::string>& archives) {
  std::string all;
  for (const auto& a : archives) all += fnv1a_hex(a);
  return fnv1a_hex(all);
}

LoadedModel load_networks(const fs::path& dir, std::vector<std::string>* archives_out = nullptr) {
  LoadedModel out;
  out.manifest = read_manifest(dir);
  out.model = Model::create(out.manifest.model_config, 0);
  std::vector<std::string> archives;
  auto nets = out.model.networks();
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const std::string file = std::string(kNetworkFiles[k]) + ".bin";
    archives.push_back(read_verified(dir, file, out.manifest));
    assign_values(*nets[k].second, decode_tensor_archive(archives.back(), file), file);
  }
  out.fingerprint = fingerprint_of(archives);
  if (archives_out) *archives_out = std::move(archives);
  return out;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string encode_tensor_archive(const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t->rank()));
    for (int d : t->shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (real v : t->values()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

NamedTensors decode_tensor_archive(const std::string& bytes, const std::string& archive_name) {
  Reader r(bytes, archive_name);
  const auto count = r.get<std::uint32_t>("tensor_count");
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>("name length of tensor #" + std::to_string(k));
    std::string name = r.take(len, "name of tensor #" + std::to_string(k));
    const auto dtype = r.get<std::uint8_t>("dtype of " + name);
    if (dtype != 0) throw LoadError("archive " + archive_name + ": tensor " + name + " has unsupported dtype");
    const auto rank = r.get<std::uint8_t>("rank of " + name);
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.get<std::uint32_t>("dims of " + name)));
    Tensor t(shape);
    r.read_into(t.data(), t.numel(), "data of " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw LoadError("archive " + archive_name + " has trailing bytes");
  return out;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_attributes", c.n_attributes}, {"image_size", c.image_size},       {"depth", c.depth},
          {"base_channels", c.base_channels}, {"leaky_slope", c.leaky_slope}, {"latent_channels", c.latent_channels}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_attributes = j.at("n_attributes").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.depth = j.at("depth").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.latent_channels = j.at("latent_channels").get<int>();
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},       {"adam_epsilon", c.adam_epsilon},
          {"batch_size", c.batch_size},       {"total_steps", c.total_steps},
          {"recon_weight", c.recon_weight},   {"adv_weight", c.adv_weight},
          {"log_clamp_eps", c.log_clamp_eps}, {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.total_steps = j.at("total_steps").get<std::int64_t>();
  c.recon_weight = j.at("recon_weight").get<double>();
  c.adv_weight = j.at("adv_weight").get<double>();
  c.log_clamp_eps = j.at("log_clamp_eps").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void save_checkpoint(const fs::path& dir, const TrainState& state, const TrainConfig& config,
                     const std::vector<std::string>& attribute_names, const std::string& loss_history_path) {
  fs::create_directories(dir);
  nlohmann::json checksums = nlohmann::json::object();
  auto nets = state.model.networks();
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const std::string file = std::string(kNetworkFiles[k]) + ".bin";
    const std::string bytes = encode_tensor_archive(values_of(*nets[k].second));
    write_file(dir / file, bytes);
    checksums[file] = fnv1a_hex(bytes);
  }

  const AdamMoments* opts[] = {&state.encoder_opt, &state.decoder_opt, &state.d1_opt, &state.d2_opt};
  std::vector<std::string> names;
  std::vector<const Tensor*> ptrs;
  for (std::size_t k = 0; k < nets.size(); ++k) {
    std::size_t j = 0;
    for (const auto& p : *nets[k].second) {
      names.push_back(nets[k].first + "/" + p.name + "/m");
      ptrs.push_back(&opts[k]->m.at(j));
      names.push_back(nets[k].first + "/" + p.name + "/v");
      ptrs.push_back(&opts[k]->v.at(j));
      ++j;
    }
  }
  std::vector<std::pair<std::string, const Tensor*>> opt_tensors;
  for (std::size_t k = 0; k < names.size(); ++k) opt_tensors.emplace_back(names[k], ptrs[k]);
  const std::string opt_bytes = encode_tensor_archive(opt_tensors);
  write_file(dir / "optimizer.bin", opt_bytes);
  checksums["optimizer.bin"] = fnv1a_hex(opt_bytes);

  nlohmann::json trainer = {{"step", state.step},
                            {"attribute_steps", state.attribute_steps},
                            {"adam_steps",
                             {{"encoder", state.encoder_opt.step},
                              {"decoder", state.decoder_opt.step},
                              {"discriminator_1", state.d1_opt.step},
                              {"discriminator_2", state.d2_opt.step}}},
                            {"sampler", sampler_to_json(state.sampler)},
                            {"train_config", to_json(config)}};
  const std::string trainer_bytes = trainer.dump(1);
  write_file(dir / "trainer_state.json", trainer_bytes);
  checksums["trainer_state.json"] = fnv1a_hex(trainer_bytes);

  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"model_config", to_json(state.model.config)},
                             {"attribute_names", attribute_names},
                             {"iteration", state.step},
                             {"loss_history_path", loss_history_path},
                             {"checksums", checksums}};
  write_file(dir / "manifest.json", manifest.dump(2));
}

LoadedModel load_model(const fs::path& dir) { return load_networks(dir); }

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  LoadedModel lm = load_networks(dir);
  LoadedCheckpoint out;
  out.manifest = lm.manifest;
  out.fingerprint = lm.fingerprint;
  out.state.model = std::move(lm.model);

  TrainState& s = out.state;
  AdamMoments* opts[] = {&s.encoder_opt, &s.decoder_opt, &s.d1_opt, &s.d2_opt};
  auto nets = s.model.networks();
  const NamedTensors moments = decode_tensor_archive(read_verified(dir, "optimizer.bin", out.manifest), "optimizer.bin");
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : moments) by_name[name] = &t;
  for (std::size_t k = 0; k < nets.size(); ++k) {
    *opts[k] = AdamMoments::zeros_like(*nets[k].second);
    std::size_t j = 0;
    for (const auto& p : *nets[k].second) {
      for (const char* which : {"m", "v"}) {
        const std::string key = nets[k].first + "/" + p.name + "/" + which;
        auto it = by_name.find(key);
        if (it == by_name.end()) throw LoadError("optimizer.bin: missing tensor " + key);
        if (!it->second->same_shape(p.value)) throw LoadError("optimizer.bin: shape mismatch for " + key);
        (which[0] == 'm' ? opts[k]->m : opts[k]->v)[j] = *it->second;
      }
      ++j;
    }
  }

  try {
    const auto trainer = nlohmann::json::parse(read_verified(dir, "trainer_state.json", out.manifest));
    s.step = trainer.at("step").get<std::int64_t>();
    s.attribute_steps = trainer.at("attribute_steps").get<std::vector<std::int64_t>>();
    const auto& steps = trainer.at("adam_steps");
    s.encoder_opt.step = steps.at("encoder").get<std::int64_t>();
    s.decoder_opt.step = steps.at("decoder").get<std::int64_t>();
    s.d1_opt.step = steps.at("discriminator_1").get<std::int64_t>();
    s.d2_opt.step = steps.at("discriminator_2").get<std::int64_t>();
    s.sampler = sampler_from_json(trainer.at("sampler"));
    out.train_config = train_config_from_json(trainer.at("train_config"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("trainer_state.json: ") + e.what());
  }
  if (s.step != out.manifest.iteration) throw LoadError("trainer_state.json step disagrees with manifest iteration");
  return out;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
