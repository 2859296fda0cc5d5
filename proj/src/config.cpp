#include "tbps/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

namespace tbps {

namespace {

// seed is declared std::uint64_t and shares the integer alternative.
static_assert(std::is_same_v<std::size_t, std::uint64_t>, "integer config keys assume a 64-bit size_t");
using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*, std::string RunConfig::*>;

struct KeyDef {
  const char* name;
  Field field;
  const char* doc;
};

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      {"d", &RunConfig::d, "embedding width shared by both encoders and SAFA"},
      {"layers", &RunConfig::layers, "transformer blocks per encoder"},
      {"attn_heads", &RunConfig::attn_heads, "self-attention heads inside each encoder block"},
      {"mlp_ratio", &RunConfig::mlp_ratio, "MLP hidden width as a multiple of d"},
      {"patch_size", &RunConfig::patch_size, "image patch side P"},
      {"max_len", &RunConfig::max_len, "caption length after padding/truncation"},
      {"dropout", &RunConfig::dropout, "dropout inside encoder blocks"},
      {"init_std", &RunConfig::init_std, "truncated-normal init scale of encoder weights"},
      {"K", &RunConfig::K, "number of SAFA heads (part-aware embeddings)"},
      {"lambda", &RunConfig::lambda, "diversity loss weight"},
      {"eps", &RunConfig::eps, "CMPM target smoothing"},
      {"lr", &RunConfig::lr, "Adam learning rate"},
      {"batch_size", &RunConfig::batch_size, "image-caption pairs per step"},
      {"epochs", &RunConfig::epochs, "training epochs"},
      {"seed", &RunConfig::seed, "seed for init, batching and synthesis"},
      {"mode", &RunConfig::mode, "scoring mode for evaluation: global, part or both"},
      {"data", &RunConfig::data, "dataset manifest (JSON Lines)"},
      {"out", &RunConfig::out, "output directory"},
      {"checkpoint", &RunConfig::checkpoint, "checkpoint file or run directory"},
      {"num_ids", &RunConfig::num_ids, "synthetic identities"},
      {"images_per_id", &RunConfig::images_per_id, "synthetic images per identity"},
      {"captions_per_image", &RunConfig::captions_per_image, "synthetic captions per image"},
      {"image_size", &RunConfig::image_size, "synthetic image side length"},
      {"vocab_words_per_id", &RunConfig::vocab_words_per_id, "identity-specific words per synthetic identity"},
      {"noise_std", &RunConfig::noise_std, "Gaussian pixel noise of synthetic images"},
  };
  return defs;
}

const KeyDef& find_key(const std::string& key) {
  for (const auto& k : key_defs())
    if (key == k.name) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Number>
Number parse_number(const std::string& key, const std::string& value) {
  Number out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
  return out;
}

template <typename Number>
std::string format_number(Number v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

const std::vector<RunConfig::KeyInfo>& RunConfig::keys() {
  static const std::vector<KeyInfo> infos = [] {
    std::vector<KeyInfo> v;
    for (const auto& k : key_defs()) v.push_back({k.name, k.doc});
    return v;
  }();
  return infos;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const auto& def = find_key(key);
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using M = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<M, std::string>) {
          this->*member = value;
        } else if constexpr (std::is_same_v<M, double>) {
          this->*member = parse_number<double>(key, value);
        } else {
          if (!value.empty() && value[0] == '-')
            throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
          this->*member = parse_number<M>(key, value);
        }
      },
      def.field);
}

std::string RunConfig::get(const std::string& key) const {
  const auto& def = find_key(key);
  return std::visit(
      [&](auto member) -> std::string {
        using M = std::remove_cvref_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<M, std::string>)
          return this->*member;
        else
          return format_number(this->*member);
      },
      def.field);
}

void RunConfig::merge(std::istream& is, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  merge(is, path.string());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& k : key_defs()) os << k.name << " = " << get(k.name) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  if (d == 0 || layers == 0 || attn_heads == 0 || patch_size == 0 || max_len == 0)
    throw ConfigError("d, layers, attn_heads, patch_size and max_len must be positive");
  if (d % attn_heads != 0) throw ConfigError("d must be divisible by attn_heads");
  if (K == 0) throw ConfigError("K must be at least 1");
  if (K < 2 && lambda > 0.0) throw ConfigError("K=1 with lambda > 0 leaves the diversity loss undefined");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  parse_score_mode(mode);
}

ModelConfig RunConfig::model_config(std::size_t vocab_size, const ImageGeometry& geometry,
                                    std::size_t num_identities) const {
  ModelConfig m;
  m.encoder.d = d;
  m.encoder.layers = layers;
  m.encoder.attn_heads = attn_heads;
  m.encoder.mlp_ratio = mlp_ratio;
  m.encoder.patch_size = patch_size;
  m.encoder.max_len = max_len;
  m.encoder.vocab_size = vocab_size;
  m.encoder.dropout = dropout;
  m.encoder.init_std = init_std;
  m.geometry = geometry;
  m.num_heads = K;
  m.loss.epsilon = eps;
  m.loss.lambda = lambda;
  m.loss.num_identities = num_identities;
  return m;
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s;
  s.num_ids = num_ids;
  s.images_per_id = images_per_id;
  s.captions_per_image = captions_per_image;
  s.image_size = image_size;
  s.vocab_words_per_id = vocab_words_per_id;
  s.noise_std = noise_std;
  s.seed = seed;
  return s;
}

AdamConfig RunConfig::adam() const {
  AdamConfig a;
  a.lr = lr;
  return a;
}

}  // namespace tbps
