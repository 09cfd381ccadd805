#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "segchange/config.hpp"
#include "segchange/tensor.hpp"

namespace segchange {

// Variable-length sequence of semantic vectors. Rows at index >= valid_length
// are exactly zero padding.
struct TextEmbedding {
  Tensor vectors;  // (L, D)
  int valid_length = 0;
};

void validate_embedding(const TextEmbedding& e);

class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual TextEmbedding embed_prompt(const std::string& prompt) const = 0;
  virtual int width() const = 0;
};

// Hermetic default: whitespace tokens, each mapped to a width-D vector by a
// seeded hash of the token string. Reproducible across processes.
class StubTextProvider : public TextProvider {
 public:
  StubTextProvider(int width, std::uint64_t seed);
  TextEmbedding embed_prompt(const std::string& prompt) const override;
  int width() const override { return width_; }

 private:
  int width_;
  std::uint64_t seed_;
};

// One-request-per-prompt JSON protocol: POST {"prompt": string} to the
// configured URL, expecting {"vectors": [[...], ...]} with rows of the
// configured width. Transport failures and 5xx responses are retriable.
class HttpTextProvider : public TextProvider {
 public:
  HttpTextProvider(std::string url, int width, double timeout_seconds = 5.0);
  TextEmbedding embed_prompt(const std::string& prompt) const override;
  int width() const override { return width_; }

 private:
  std::string url_;
  int width_;
  double timeout_seconds_;
};

std::unique_ptr<TextProvider> make_provider(const TrainConfig& cfg, int width);

// Provider call with the non-empty-prompt precondition enforced.
TextEmbedding embed(const TextProvider& provider, const std::string& prompt);

// Truncate to max_len or zero-pad up to it; valid_length follows.
TextEmbedding fit_length(const TextEmbedding& e, int max_len);

// Row-wise concatenation of the valid rows of both phases, refitted to the
// common L (truncating when vl1+vl2 > L).
TextEmbedding aggregate_temporal(const TextEmbedding& e1, const TextEmbedding& e2);

// Table-3 conditioning modes: none -> absent; static -> template embedding;
// dynamic -> per-sample prompt, falling back to the template.
std::optional<TextEmbedding> conditioning(TextMode mode,
                                          const std::optional<std::string>& sample_prompt,
                                          const std::string& static_template,
                                          const TextProvider& provider);

}  // namespace segchange
