#include "segchange/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "segchange/errors.hpp"

namespace segchange {

std::string to_string(TextMode m) {
  switch (m) {
    case TextMode::none: return "none";
    case TextMode::static_prompt: return "static";
    case TextMode::dynamic: return "dynamic";
  }
  return "none";
}

std::string to_string(BevMode m) {
  switch (m) {
    case BevMode::none: return "none";
    case BevMode::transformer: return "transformer";
    case BevMode::additive_exact: return "additive_exact";
    case BevMode::additive_linear: return "additive_linear";
  }
  return "none";
}

std::string to_string(TextProviderKind p) {
  return p == TextProviderKind::stub ? "stub" : "http";
}

TextMode text_mode_from_string(const std::string& s) {
  if (s == "none") return TextMode::none;
  if (s == "static") return TextMode::static_prompt;
  if (s == "dynamic") return TextMode::dynamic;
  throw ConfigError("invalid text.mode: " + s);
}

BevMode bev_mode_from_string(const std::string& s) {
  if (s == "none") return BevMode::none;
  if (s == "transformer") return BevMode::transformer;
  if (s == "additive_exact") return BevMode::additive_exact;
  if (s == "additive_linear") return BevMode::additive_linear;
  throw ConfigError("invalid bev.mode: " + s);
}

TextProviderKind provider_from_string(const std::string& s) {
  if (s == "stub") return TextProviderKind::stub;
  if (s == "http") return TextProviderKind::http;
  throw ConfigError("invalid text.provider: " + s);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw ConfigError("bad number for " + key + ": " + v);
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ConfigError("bad integer for " + key + ": " + v);
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ConfigError("bad seed for " + key + ": " + v);
  return x;
}

std::array<int, 4> parse_channels(const std::string& key, const std::string& v) {
  std::array<int, 4> out{};
  std::stringstream ss(v);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) throw ConfigError(key + " needs exactly 4 widths: " + v);
    out[static_cast<std::size_t>(i++)] = static_cast<int>(parse_int(key, trim(item)));
  }
  if (i != 4) throw ConfigError(key + " needs exactly 4 widths: " + v);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr_main <= 0 || lr_backbone <= 0) throw ConfigError("learning rates must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (sched_step < 1) throw ConfigError("sched_step must be >= 1");
  if (sched_gamma <= 0) throw ConfigError("sched_gamma must be positive");
  for (int c : backbone.channels)
    if (c <= 0) throw ConfigError("backbone.channels must be positive");
  if (text.max_len < 1) throw ConfigError("text.max_len must be >= 1");
  if (bev.attn_dim < 1) throw ConfigError("bev.attn_dim must be >= 1");
  if (fuse.diff_channels < 1 || fuse.fpn_channels < 1)
    throw ConfigError("fuse channel widths must be >= 1");
  if (decoder.num_queries < 1) throw ConfigError("decoder.num_queries must be >= 1");
  if (decoder.layers < 1) throw ConfigError("decoder.layers must be >= 1");
  if (!(decoder.threshold > 0.0 && decoder.threshold < 1.0))
    throw ConfigError("decoder.threshold must lie in (0,1)");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"lr_main", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr_main = parse_double(k, v); }},
      {"lr_backbone", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr_backbone = parse_double(k, v); }},
      {"weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
      {"epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs = static_cast<int>(parse_int(k, v)); }},
      {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = static_cast<int>(parse_int(k, v)); }},
      {"sched_step", [](TrainConfig& c, const std::string& k, const std::string& v) { c.sched_step = static_cast<int>(parse_int(k, v)); }},
      {"sched_gamma", [](TrainConfig& c, const std::string& k, const std::string& v) { c.sched_gamma = parse_double(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"backbone.name", [](TrainConfig& c, const std::string&, const std::string& v) { c.backbone.name = v; }},
      {"backbone.channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.backbone.channels = parse_channels(k, v); }},
      {"text.mode", [](TrainConfig& c, const std::string&, const std::string& v) { c.text.mode = text_mode_from_string(v); }},
      {"text.template", [](TrainConfig& c, const std::string&, const std::string& v) { c.text.template_text = v; }},
      {"text.max_len", [](TrainConfig& c, const std::string& k, const std::string& v) { c.text.max_len = static_cast<int>(parse_int(k, v)); }},
      {"text.provider", [](TrainConfig& c, const std::string&, const std::string& v) { c.text.provider = provider_from_string(v); }},
      {"text.http.url", [](TrainConfig& c, const std::string&, const std::string& v) { c.text.http_url = v; }},
      {"text.seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.text.seed = parse_u64(k, v); }},
      {"bev.mode", [](TrainConfig& c, const std::string&, const std::string& v) { c.bev.mode = bev_mode_from_string(v); }},
      {"bev.attn_dim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.bev.attn_dim = static_cast<int>(parse_int(k, v)); }},
      {"bev.seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.bev.seed = parse_u64(k, v); }},
      {"fuse.diff_channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.fuse.diff_channels = static_cast<int>(parse_int(k, v)); }},
      {"fuse.fpn_channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.fuse.fpn_channels = static_cast<int>(parse_int(k, v)); }},
      {"decoder.num_queries", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decoder.num_queries = static_cast<int>(parse_int(k, v)); }},
      {"decoder.layers", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decoder.layers = static_cast<int>(parse_int(k, v)); }},
      {"decoder.threshold", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decoder.threshold = parse_double(k, v); }},
      {"data.root", [](TrainConfig& c, const std::string&, const std::string& v) { c.data.root = v; }},
      {"data.train_split", [](TrainConfig& c, const std::string&, const std::string& v) { c.data.train_split = v; }},
      {"data.val_split", [](TrainConfig& c, const std::string&, const std::string& v) { c.data.val_split = v; }},
      {"out.dir", [](TrainConfig& c, const std::string&, const std::string& v) { c.out.dir = v; }},
  };

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key: " + key);
    it->second(cfg, key, value);
  }
  if (const char* url = std::getenv("SEGCHANGE_TEXT_URL"); url && *url) cfg.text.http_url = url;
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw LoadError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "lr_main = " << format_double(cfg.lr_main) << "\n";
  os << "lr_backbone = " << format_double(cfg.lr_backbone) << "\n";
  os << "weight_decay = " << format_double(cfg.weight_decay) << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "sched_step = " << cfg.sched_step << "\n";
  os << "sched_gamma = " << format_double(cfg.sched_gamma) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "backbone.name = " << cfg.backbone.name << "\n";
  os << "backbone.channels = " << cfg.backbone.channels[0] << "," << cfg.backbone.channels[1]
     << "," << cfg.backbone.channels[2] << "," << cfg.backbone.channels[3] << "\n";
  os << "text.mode = " << to_string(cfg.text.mode) << "\n";
  os << "text.template = " << cfg.text.template_text << "\n";
  os << "text.max_len = " << cfg.text.max_len << "\n";
  os << "text.provider = " << to_string(cfg.text.provider) << "\n";
  os << "text.http.url = " << cfg.text.http_url << "\n";
  os << "text.seed = " << cfg.text.seed << "\n";
  os << "bev.mode = " << to_string(cfg.bev.mode) << "\n";
  os << "bev.attn_dim = " << cfg.bev.attn_dim << "\n";
  os << "bev.seed = " << cfg.bev.seed << "\n";
  os << "fuse.diff_channels = " << cfg.fuse.diff_channels << "\n";
  os << "fuse.fpn_channels = " << cfg.fuse.fpn_channels << "\n";
  os << "decoder.num_queries = " << cfg.decoder.num_queries << "\n";
  os << "decoder.layers = " << cfg.decoder.layers << "\n";
  os << "decoder.threshold = " << format_double(cfg.decoder.threshold) << "\n";
  os << "data.root = " << cfg.data.root << "\n";
  os << "data.train_split = " << cfg.data.train_split << "\n";
  os << "data.val_split = " << cfg.data.val_split << "\n";
  os << "out.dir = " << cfg.out.dir << "\n";
  return os.str();
}

}  // namespace segchange
