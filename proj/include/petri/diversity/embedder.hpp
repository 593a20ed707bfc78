#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "petri/runio/image.hpp"

namespace petri {

using Embedding = std::vector<float>;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  /// One unit-norm vector per image.
  virtual std::vector<Embedding> embed(const std::vector<Image>& frames) = 0;
};

/// Hand-built 768-d image features:
///   144  12x12 block-mean luminance
///   432  12x12 block-mean R, G, B
///    64  joint histogram, 16 hues x 4 brightness levels
///    64  8x8 block-mean gradient magnitude
///    64  autocorrelation of 8 horizontal and 8 vertical strip profiles at lags 1, 2, 4, 8
class BuiltinEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kDimension = 768;

  std::string name() const override { return "builtin"; }
  std::size_t dimension() const override { return kDimension; }
  std::vector<Embedding> embed(const std::vector<Image>& frames) override;

  static Embedding features(const Image& image);
};

/// Client for the newline-delimited JSON embedding service. Connects and
/// reads the handshake in the constructor.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(const std::string& endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(60));
  ~RemoteEmbedder() override;
  RemoteEmbedder(const RemoteEmbedder&) = delete;
  RemoteEmbedder& operator=(const RemoteEmbedder&) = delete;

  std::string name() const override { return "remote:" + model_; }
  std::size_t dimension() const override { return dim_; }
  std::vector<Embedding> embed(const std::vector<Image>& frames) override;

  static constexpr std::size_t kMaxBatch = 256;

 private:
  std::string read_line();
  void write_all(const std::string& data);

  int fd_ = -1;
  std::string buffer_;
  std::string model_;
  std::size_t dim_ = 0;
  std::uint64_t next_id_ = 1;
};

/// host:port split; throws ConfigError when malformed.
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

inline constexpr const char* kEmbedEndpointEnv = "PETRI_EMBED_ENDPOINT";

/// Remote embedder at $PETRI_EMBED_ENDPOINT if set, else at `endpoint`; the
/// builtin embedder when neither is given or the connection fails (reported
/// through `warn`).
std::unique_ptr<Embedder> make_embedder(const std::string& endpoint,
                                        const std::function<void(const std::string&)>& warn);

}  // namespace petri
