#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace segchange {

enum class TextMode { none, static_prompt, dynamic };
enum class BevMode { none, transformer, additive_exact, additive_linear };
enum class TextProviderKind { stub, http };

std::string to_string(TextMode m);
std::string to_string(BevMode m);
std::string to_string(TextProviderKind p);
TextMode text_mode_from_string(const std::string& s);
BevMode bev_mode_from_string(const std::string& s);
TextProviderKind provider_from_string(const std::string& s);

// Flat dotted-key run configuration. Top-level keys are the training
// hyperparameters; module settings live under backbone.*, text.*, bev.*,
// fuse.*, decoder.*, data.*, out.*. Unknown keys are an error.
struct TrainConfig {
  double lr_main = 1e-4;
  double lr_backbone = 1e-5;
  double weight_decay = 1e-4;
  int epochs = 128;
  int batch_size = 16;
  int sched_step = 20;
  double sched_gamma = 0.1;
  std::uint64_t seed = 0;

  struct {
    std::string name = "tiny";
    std::array<int, 4> channels = {8, 16, 32, 64};
  } backbone;

  struct {
    TextMode mode = TextMode::none;
    std::string template_text = "a remote sensing change";
    int max_len = 16;
    TextProviderKind provider = TextProviderKind::stub;
    std::string http_url;
    std::uint64_t seed = 0;
  } text;

  struct {
    BevMode mode = BevMode::additive_linear;
    int attn_dim = 16;
    std::uint64_t seed = 0;
  } bev;

  struct {
    int diff_channels = 64;
    int fpn_channels = 64;
  } fuse;

  struct {
    int num_queries = 8;
    int layers = 2;
    double threshold = 0.5;
  } decoder;

  struct {
    std::string root;
    std::string train_split = "train";
    std::string val_split = "val";
  } data;

  struct {
    std::string dir = "runs/default";
  } out;

  bool operator==(const TrainConfig&) const = default;

  void validate() const;  // throws ConfigError on invariant violations
};

// `key = value` lines, '#' comments. Applies the SEGCHANGE_TEXT_URL
// environment override after parsing and validates the result.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string serialize_config(const TrainConfig& cfg);

// Lossless double formatting (%.17g) shared by config and log output.
std::string format_double(double v);

}  // namespace segchange
