#include <netdb.h>
#include <openssl/evp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <json.hpp>

#include "petri/diversity/embedder.hpp"

namespace petri {

using nlohmann::json;

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
    throw ConfigError("embedding endpoint must be host:port, got '" + endpoint + "'");
  }
  std::string host = endpoint.substr(0, colon);
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  return {host, endpoint.substr(colon + 1)};
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

RemoteEmbedder::RemoteEmbedder(const std::string& endpoint, std::chrono::milliseconds timeout) {
  const auto [host, port] = split_endpoint(endpoint);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error("embedder: cannot resolve " + endpoint + ": " + gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    if (connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    last_error = std::strerror(errno);
    close(fd);
  }
  freeaddrinfo(res);
  if (fd_ < 0) throw Error("embedder: cannot connect to " + endpoint + ": " + last_error);

  try {
    const json hs = json::parse(read_line());
    if (hs.value("protocol", 0) != 1) throw Error("embedder: unsupported protocol in handshake");
    dim_ = hs.at("dim").get<std::size_t>();
    model_ = hs.value("model", std::string("unknown"));
    if (dim_ == 0) throw Error("embedder: handshake advertises dim 0");
  } catch (const json::exception& e) {
    close(fd_);
    throw Error(std::string("embedder: bad handshake: ") + e.what());
  } catch (...) {
    close(fd_);
    throw;
  }
}

RemoteEmbedder::~RemoteEmbedder() {
  if (fd_ >= 0) close(fd_);
}

std::string RemoteEmbedder::read_line() {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[65536];
    const ssize_t n = recv(fd_, chunk, sizeof chunk, 0);
    if (n == 0) throw Error("embedder: connection closed");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("embedder: receive failed: ") + std::strerror(errno));
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void RemoteEmbedder::write_all(const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("embedder: send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::vector<Embedding> RemoteEmbedder::embed(const std::vector<Image>& frames) {
  std::vector<Embedding> out;
  for (std::size_t begin = 0; begin < frames.size(); begin += kMaxBatch) {
    const std::size_t end = std::min(frames.size(), begin + kMaxBatch);
    const std::uint64_t id = next_id_++;
    json req{{"id", id}, {"frames", json::array()}};
    for (std::size_t i = begin; i < end; ++i) req["frames"].push_back(base64_encode(encode_png(frames[i])));
    write_all(req.dump() + "\n");

    json resp;
    try {
      resp = json::parse(read_line());
    } catch (const json::exception& e) {
      throw Error(std::string("embedder: malformed response: ") + e.what());
    }
    if (resp.value("id", std::uint64_t{0}) != id) throw Error("embedder: response id does not match request");
    if (resp.contains("error") && !resp["error"].is_null()) {
      throw Error("embedder: service error: " + resp["error"].dump());
    }
    const auto& embs = resp.at("embeddings");
    if (embs.size() != end - begin) throw Error("embedder: wrong number of embeddings");
    for (const auto& e : embs) {
      Embedding z = e.get<Embedding>();
      if (z.size() != dim_) throw Error("embedder: embedding length differs from handshake dim");
      double norm = 0;
      for (float v : z) {
        if (!std::isfinite(v)) throw Error("embedder: non-finite embedding");
        norm += static_cast<double>(v) * v;
      }
      norm = std::sqrt(norm);
      if (norm > 0) {
        for (float& v : z) v = static_cast<float>(v / norm);
      }
      out.push_back(std::move(z));
    }
  }
  return out;
}

std::unique_ptr<Embedder> make_embedder(const std::string& endpoint,
                                        const std::function<void(const std::string&)>& warn) {
  std::string target = endpoint;
  if (const char* env = std::getenv(kEmbedEndpointEnv); env && *env) target = env;
  if (!target.empty()) {
    try {
      return std::make_unique<RemoteEmbedder>(target);
    } catch (const Error& e) {
      if (warn) warn(std::string(e.what()) + "; falling back to the builtin embedder");
    }
  }
  return std::make_unique<BuiltinEmbedder>();
}

}  // namespace petri
