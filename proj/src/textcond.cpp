#include "segchange/textcond.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "segchange/errors.hpp"
#include "segchange/rng.hpp"

namespace segchange {

void validate_embedding(const TextEmbedding& e) {
  if (e.vectors.ndim() != 2) throw ShapeError("text embedding must be (L,D)");
  if (e.valid_length < 0 || e.valid_length > e.vectors.dim(0))
    throw ValidationError("valid_length out of range");
  if (!e.vectors.all_finite()) throw ValidationError("text embedding has non-finite values");
  for (int i = e.valid_length; i < e.vectors.dim(0); ++i)
    for (int j = 0; j < e.vectors.dim(1); ++j)
      if (e.vectors.at(i, j) != 0.0)
        throw ValidationError("padding rows must be exactly zero");
}

namespace {

std::vector<std::string> tokenize(const std::string& prompt) {
  std::vector<std::string> tokens;
  std::istringstream is(prompt);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

}  // namespace

StubTextProvider::StubTextProvider(int width, std::uint64_t seed)
    : width_(width), seed_(seed) {
  if (width < 1) throw ConfigError("text width must be >= 1");
}

TextEmbedding StubTextProvider::embed_prompt(const std::string& prompt) const {
  const auto tokens = tokenize(prompt);
  if (tokens.empty()) throw ValidationError("embed: prompt has no tokens");
  TextEmbedding e;
  e.vectors = Tensor({static_cast<int>(tokens.size()), width_});
  e.valid_length = static_cast<int>(tokens.size());
  const double s = 1.0 / std::sqrt(static_cast<double>(width_));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Rng rng(mix_seed(seed_, fnv1a64(tokens[t])));
    for (int j = 0; j < width_; ++j) e.vectors.at(static_cast<int>(t), j) = rng.gaussian() * s;
  }
  return e;
}

HttpTextProvider::HttpTextProvider(std::string url, int width, double timeout_seconds)
    : url_(std::move(url)), width_(width), timeout_seconds_(timeout_seconds) {
  if (width < 1) throw ConfigError("text width must be >= 1");
  if (url_.empty()) throw ConfigError("text.http.url is empty");
}

TextEmbedding HttpTextProvider::embed_prompt(const std::string& prompt) const {
  // Split "http://host:port/path" into client base and path.
  const auto scheme_end = url_.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("text.http.url must start with http://");
  const auto path_start = url_.find('/', scheme_end + 3);
  const std::string base = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(std::chrono::milliseconds(
      static_cast<int>(timeout_seconds_ * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(static_cast<int>(timeout_seconds_ * 1000)));

  const nlohmann::json body{{"prompt", prompt}};
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res)
    throw ProviderError("text provider unreachable at " + url_ + ": " +
                            httplib::to_string(res.error()),
                        /*retriable=*/true);
  if (res->status != 200)
    throw ProviderError("text provider returned status " + std::to_string(res->status),
                        /*retriable=*/res->status >= 500);

  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("vectors") || !j["vectors"].is_array())
    throw ProviderError("text provider returned malformed body", /*retriable=*/false);
  const auto& rows = j["vectors"];
  if (rows.empty()) throw ProviderError("text provider returned no vectors", false);
  TextEmbedding e;
  e.vectors = Tensor({static_cast<int>(rows.size()), width_});
  e.valid_length = static_cast<int>(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || static_cast<int>(rows[i].size()) != width_)
      throw ProviderError("text provider row width != " + std::to_string(width_), false);
    for (int jx = 0; jx < width_; ++jx)
      e.vectors.at(static_cast<int>(i), jx) = rows[i][static_cast<std::size_t>(jx)].get<double>();
  }
  validate_embedding(e);
  return e;
}

std::unique_ptr<TextProvider> make_provider(const TrainConfig& cfg, int width) {
  if (cfg.text.provider == TextProviderKind::http)
    return std::make_unique<HttpTextProvider>(cfg.text.http_url, width);
  return std::make_unique<StubTextProvider>(width, mix_seed(cfg.seed, cfg.text.seed));
}

TextEmbedding embed(const TextProvider& provider, const std::string& prompt) {
  if (tokenize(prompt).empty()) throw ValidationError("embed: prompt must be non-empty");
  TextEmbedding e = provider.embed_prompt(prompt);
  validate_embedding(e);
  return e;
}

TextEmbedding fit_length(const TextEmbedding& e, int max_len) {
  if (max_len < 1) throw ValidationError("fit_length: max_len must be >= 1");
  TextEmbedding out;
  out.vectors = Tensor({max_len, e.vectors.dim(1)});
  out.valid_length = std::min(e.valid_length, max_len);
  for (int i = 0; i < out.valid_length; ++i)
    for (int j = 0; j < e.vectors.dim(1); ++j) out.vectors.at(i, j) = e.vectors.at(i, j);
  return out;
}

TextEmbedding aggregate_temporal(const TextEmbedding& e1, const TextEmbedding& e2) {
  if (e1.vectors.dim(1) != e2.vectors.dim(1))
    throw ShapeError("aggregate_temporal: width mismatch");
  if (e1.vectors.dim(0) != e2.vectors.dim(0))
    throw ShapeError("aggregate_temporal: operands must be fitted to the same length");
  const int L = e1.vectors.dim(0), d = e1.vectors.dim(1);
  TextEmbedding out;
  out.vectors = Tensor({L, d});
  out.valid_length = std::min(L, e1.valid_length + e2.valid_length);
  int row = 0;
  for (int i = 0; i < e1.valid_length && row < L; ++i, ++row)
    for (int j = 0; j < d; ++j) out.vectors.at(row, j) = e1.vectors.at(i, j);
  for (int i = 0; i < e2.valid_length && row < L; ++i, ++row)
    for (int j = 0; j < d; ++j) out.vectors.at(row, j) = e2.vectors.at(i, j);
  return out;
}

std::optional<TextEmbedding> conditioning(TextMode mode,
                                          const std::optional<std::string>& sample_prompt,
                                          const std::string& static_template,
                                          const TextProvider& provider) {
  switch (mode) {
    case TextMode::none:
      return std::nullopt;
    case TextMode::static_prompt:
      if (static_template.empty()) throw ConfigError("static text mode needs text.template");
      return embed(provider, static_template);
    case TextMode::dynamic:
      if (sample_prompt && !sample_prompt->empty()) return embed(provider, *sample_prompt);
      if (!static_template.empty()) return embed(provider, static_template);
      throw ConfigError("dynamic text mode: sample has no prompt and text.template is empty");
  }
  return std::nullopt;
}

}  // namespace segchange
