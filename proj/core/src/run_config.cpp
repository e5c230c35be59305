#include "ppgn/pipeline/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = static_cast<T>(std::stod(value, &used));
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw InvalidInputError("config key '" + key + "': not a number: '" + value + "'");
    }
  } else {
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc() || res.ptr != last) {
      throw InvalidInputError("config key '" + key + "': not an integer: '" + value + "'");
    }
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  return out;
}

std::vector<AnchorWh> parse_priors(const std::string& key, const std::string& value) {
  std::vector<AnchorWh> out;
  if (value == "recompute" || value.empty()) return out;
  std::stringstream ss(value);
  std::string pair;
  while (std::getline(ss, pair, ';')) {
    pair = trim(pair);
    if (pair.empty()) continue;
    const auto comma = pair.find(',');
    if (comma == std::string::npos) {
      throw InvalidInputError("config key '" + key + "': expected w,h pairs, got '" + pair + "'");
    }
    out.push_back({parse_number<double>(key, trim(pair.substr(0, comma))),
                   parse_number<double>(key, trim(pair.substr(comma + 1)))});
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* loss_variant_name(LossVariant v) {
  return v == LossVariant::kKld ? "kld" : "softmax";
}

LossVariant parse_loss_variant(const std::string& name) {
  if (name == "kld") return LossVariant::kKld;
  if (name == "softmax") return LossVariant::kSoftmax;
  throw InvalidInputError("unknown loss variant '" + name + "' (expected kld or softmax)");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidInputError("invalid config: " + m); };
  if (!(eta > 0.0 && eta < 1.0)) fail("eta must lie in (0, 1)");
  if (gamma < 0.0) fail("gamma must be non-negative");
  if (k < 1) fail("k must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(base_lr >= 0.0)) fail("base_lr must be non-negative");
  if (max_steps < 1) fail("max_steps must be at least 1");
  if (!(backbone_lr_divisor > 0.0)) fail("backbone_lr_divisor must be positive");
  if (eval_every < 1) fail("eval_every must be at least 1");
  if (eval_k_list.empty()) fail("eval_k_list must not be empty");
  for (int kk : eval_k_list) {
    if (kk < 1) fail("eval_k_list entries must be at least 1");
  }
  if (!anchor_priors.empty() &&
      anchor_priors.size() != static_cast<std::size_t>(anchors_per_cell) * scales.size()) {
    fail("anchor_priors needs anchors_per_cell * len(scales) pairs");
  }
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed_dim = embed_dim;
  m.channels = channels;
  m.image_size = image_size;
  m.scales = scales;
  m.anchors_per_cell = anchors_per_cell;
  m.seed = seed;
  return m;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"data_dir", [&](auto&, auto& v) { c.data_dir = v; }},
      {"output_dir", [&](auto&, auto& v) { c.output_dir = v; }},
      {"loss", [&](auto&, auto& v) { c.loss = parse_loss_variant(v); }},
      {"eta", [&](auto& k, auto& v) { c.eta = parse_number<double>(k, v); }},
      {"gamma", [&](auto& k, auto& v) { c.gamma = parse_number<double>(k, v); }},
      {"k", [&](auto& k, auto& v) { c.k = parse_number<int>(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = parse_number<int>(k, v); }},
      {"base_lr", [&](auto& k, auto& v) { c.base_lr = parse_number<double>(k, v); }},
      {"max_steps", [&](auto& k, auto& v) { c.max_steps = parse_number<long>(k, v); }},
      {"backbone_lr_divisor",
       [&](auto& k, auto& v) { c.backbone_lr_divisor = parse_number<double>(k, v); }},
      {"scales", [&](auto& k, auto& v) { c.scales = parse_int_list(k, v); }},
      {"channels", [&](auto& k, auto& v) { c.channels = parse_number<int>(k, v); }},
      {"embed_dim", [&](auto& k, auto& v) { c.embed_dim = parse_number<int>(k, v); }},
      {"image_size", [&](auto& k, auto& v) { c.image_size = parse_number<int>(k, v); }},
      {"anchors_per_cell", [&](auto& k, auto& v) { c.anchors_per_cell = parse_number<int>(k, v); }},
      {"anchor_priors", [&](auto& k, auto& v) { c.anchor_priors = parse_priors(k, v); }},
      {"anchor_seed", [&](auto& k, auto& v) { c.anchor_seed = parse_number<std::uint64_t>(k, v); }},
      {"eval_every", [&](auto& k, auto& v) { c.eval_every = parse_number<long>(k, v); }},
      {"eval_max_samples", [&](auto& k, auto& v) { c.eval_max_samples = parse_number<int>(k, v); }},
      {"eval_k_list", [&](auto& k, auto& v) { c.eval_k_list = parse_int_list(k, v); }},
  };
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInputError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw InvalidInputError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    it->second(key, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_to_text(const RunConfig& c) {
  std::ostringstream out;
  out << "seed = " << c.seed << "\n"
      << "data_dir = " << c.data_dir << "\n"
      << "output_dir = " << c.output_dir << "\n"
      << "loss = " << loss_variant_name(c.loss) << "\n"
      << "eta = " << fmt_double(c.eta) << "\n"
      << "gamma = " << fmt_double(c.gamma) << "\n"
      << "k = " << c.k << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "base_lr = " << fmt_double(c.base_lr) << "\n"
      << "max_steps = " << c.max_steps << "\n"
      << "backbone_lr_divisor = " << fmt_double(c.backbone_lr_divisor) << "\n"
      << "scales = " << join(c.scales) << "\n"
      << "channels = " << c.channels << "\n"
      << "embed_dim = " << c.embed_dim << "\n"
      << "image_size = " << c.image_size << "\n"
      << "anchors_per_cell = " << c.anchors_per_cell << "\n"
      << "anchor_seed = " << c.anchor_seed << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "eval_max_samples = " << c.eval_max_samples << "\n"
      << "eval_k_list = " << join(c.eval_k_list) << "\n";
  out << "# anchor priors (w,h), normalized to the input image\n";
  if (c.anchor_priors.empty()) {
    out << "anchor_priors = recompute\n";
  } else {
    out << "anchor_priors = ";
    for (std::size_t i = 0; i < c.anchor_priors.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s%.6f,%.6f", i ? "; " : "", c.anchor_priors[i].w,
                    c.anchor_priors[i].h);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

std::uint64_t config_fingerprint(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : run_config_to_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PPGN_NAMESPACE_END
