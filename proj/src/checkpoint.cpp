#include "skipgrid/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "skipgrid/error.hpp"

namespace skipgrid {

std::string format_float_exact(float v) {
  // Try increasing precision until the text reparses to the identical value;
  // 9 significant digits always suffice for binary32.
  char buf[48];
  for (int prec = 6; prec <= 9; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, static_cast<double>(v));
    if (std::strtof(buf, nullptr) == v) return buf;
  }
  return buf;
}

std::string format_rate(float v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", static_cast<double>(v));
  return buf;
}

std::map<std::string, std::string> model_config_kv(const ModelConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["n_layer"] = std::to_string(cfg.n_layer);
  kv["n_head"] = std::to_string(cfg.n_head);
  kv["n_embd"] = std::to_string(cfg.n_embd);
  kv["block_size"] = std::to_string(cfg.block_size);
  kv["vocab_size"] = std::to_string(cfg.vocab_size);
  kv["attn"] = format_float_exact(cfg.attn_mlp_dropout);
  kv["res1"] = format_float_exact(cfg.topology.skip1);
  kv["res2"] = cfg.topology.skip2 ? format_float_exact(*cfg.topology.skip2) : "none";
  kv["res4"] = cfg.topology.skip4 ? format_float_exact(*cfg.topology.skip4) : "none";
  kv["res_stride"] = std::to_string(cfg.topology.stride);
  kv["activation"] = to_string(cfg.activation);
  kv["seed"] = std::to_string(cfg.seed);
  return kv;
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  auto need = [&kv](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error::data(std::string("config is missing key '") + key + "'");
    return it->second;
  };
  ModelConfig cfg;
  cfg.n_layer = std::stoi(need("n_layer"));
  cfg.n_head = std::stoi(need("n_head"));
  cfg.n_embd = std::stoi(need("n_embd"));
  cfg.block_size = std::stoi(need("block_size"));
  cfg.vocab_size = std::stoi(need("vocab_size"));
  cfg.attn_mlp_dropout = std::strtof(need("attn").c_str(), nullptr);
  cfg.topology.skip1 = std::strtof(need("res1").c_str(), nullptr);
  if (need("res2") != "none") cfg.topology.skip2 = std::strtof(need("res2").c_str(), nullptr);
  if (need("res4") != "none") cfg.topology.skip4 = std::strtof(need("res4").c_str(), nullptr);
  cfg.topology.stride = std::stoi(need("res_stride"));
  cfg.activation = activation_from_string(need("activation"));
  cfg.seed = std::strtoull(need("seed").c_str(), nullptr, 10);
  cfg.validate();
  return cfg;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

struct Reader {
  const std::string& buf;
  std::size_t at = 0;

  bool eof() const { return at >= buf.size(); }
  void need(std::size_t n, const char* what) {
    if (at + n > buf.size())
      throw Error::data(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + at);
    at += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const DecoderModel<float>& model,
                     const std::map<std::string, std::string>& extras, const std::string& path) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);

  std::string config;
  for (const auto& [k, v] : model_config_kv(model.config)) config += k + "=" + v + "\n";
  for (const auto& [k, v] : extras) config += k + "=" + v + "\n";
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out += config;

  for (const auto& [name, t] : model.parameters) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const std::size_t nbytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    const std::size_t off = out.size();
    out.resize(off + nbytes);
    std::memcpy(out.data() + off, t.values().data(), nbytes);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.is_open()) throw Error::io("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f.good()) throw Error::io("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.is_open()) throw Error::io("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(4, "magic") != std::string(kCheckpointMagic, 4))
    throw Error::data("not a checkpoint file (bad magic): " + path);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw Error::data("unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t config_len = r.u32("config length");
  const std::string config = r.bytes(config_len, "config");
  std::map<std::string, std::string> kv;
  std::size_t line_start = 0;
  while (line_start < config.size()) {
    std::size_t nl = config.find('\n', line_start);
    if (nl == std::string::npos) nl = config.size();
    const std::string line = config.substr(line_start, nl - line_start);
    line_start = nl + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw Error::data("malformed checkpoint config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  LoadedCheckpoint loaded;
  ModelConfig cfg = model_config_from_kv(kv);

  std::map<std::string, Tensor<float>> by_name;
  while (!r.eof()) {
    const std::uint32_t name_len = r.u32("parameter name length");
    const std::string name = r.bytes(name_len, "parameter name");
    const std::uint32_t ndim = r.u32("dim count");
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i)
      shape.push_back(static_cast<int>(r.u32("dimension")));
    const long n = numel(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    const std::string raw = r.bytes(static_cast<std::size_t>(n) * sizeof(float), "weights");
    std::memcpy(data.data(), raw.data(), raw.size());
    if (by_name.count(name)) throw Error::data("duplicate parameter in checkpoint: " + name);
    by_name.emplace(name, Tensor<float>::from(shape, std::move(data)));
  }

  std::vector<Tensor<float>> params;
  for (const ParamSpec& ps : parameter_spec(cfg)) {
    auto it = by_name.find(ps.name);
    if (it == by_name.end()) throw Error::data("checkpoint is missing parameter: " + ps.name);
    params.push_back(it->second);
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw Error::data("checkpoint has unexpected parameter: " + by_name.begin()->first);

  loaded.model = assemble_model(cfg, std::move(params));
  // everything that is not a model-config key is an extra
  const std::map<std::string, std::string> model_keys = model_config_kv(cfg);
  for (const auto& [k, v] : kv)
    if (!model_keys.count(k)) loaded.extras[k] = v;
  return loaded;
}

}  // namespace skipgrid
