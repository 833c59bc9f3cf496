#pragma once

#include <algorithm>
#include <cstdlib>
#include <utility>
#include <string>
#include <vector>

#include <httplib.h>

#include "pesco/encoder.hpp"
#include "pesco/errors.hpp"
#include "pesco/linalg.hpp"

namespace pesco {

// Adapter for a pretrained sentence encoder served over HTTP. Request: POST
// /encode with one text per line. Response: one line per text holding D
// space-separated decimal floats. D is fixed per session by the first
// response. Vectors are re-normalized locally so the unit-norm invariant
// holds regardless of server behavior.

struct RemoteEndpoint {
  std::string host;
  int port = 0;
};

inline RemoteEndpoint parse_endpoint(const std::string& endpoint) {
  std::string rest = endpoint;
  if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
  if (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
    throw ConfigError("endpoint must look like host:port, got \"" + endpoint + "\"");
  char* end = nullptr;
  const long port = std::strtol(rest.c_str() + colon + 1, &end, 10);
  if (*end != '\0' || port <= 0 || port > 65535)
    throw ConfigError("bad port in endpoint \"" + endpoint + "\"");
  return RemoteEndpoint{rest.substr(0, colon), static_cast<int>(port)};
}

namespace detail {

// The wire format is line-delimited, so embedded line breaks become spaces.
inline std::string flatten_text(const std::string& text) {
  std::string out = text;
  for (char& c : out)
    if (c == '\n' || c == '\r') c = ' ';
  return out;
}

inline std::vector<double> parse_vector_line(const std::string& line) {
  std::vector<double> values;
  const char* cursor = line.c_str();
  while (*cursor != '\0') {
    char* end = nullptr;
    const double value = std::strtod(cursor, &end);
    if (end == cursor) {
      while (*cursor == ' ' || *cursor == '\t') ++cursor;
      if (*cursor == '\0') break;
      throw ProtocolViolationError("unparseable embedding line: " + line);
    }
    values.push_back(value);
    cursor = end;
  }
  return values;
}

}  // namespace detail

inline std::vector<EmbeddingVector> remote_encode(const std::string& endpoint,
                                                  const std::vector<std::string>& texts) {
  if (texts.empty()) throw DataError("remote_encode requires at least one text");
  const RemoteEndpoint ep = parse_endpoint(endpoint);

  std::string body;
  for (const auto& text : texts) {
    body += detail::flatten_text(text);
    body += '\n';
  }

  httplib::Client client(ep.host, ep.port);
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(120, 0);
  auto response = client.Post("/encode", body, "text/plain");
  if (!response)
    throw RemoteEncoderUnavailableError("no response from " + endpoint + ": " +
                                        httplib::to_string(response.error()));
  if (response->status != 200)
    throw RemoteEncoderUnavailableError("encoder at " + endpoint + " returned HTTP status " +
                                        std::to_string(response->status));

  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    const std::string& payload = response->body;
    while (start <= payload.size()) {
      auto newline = payload.find('\n', start);
      if (newline == std::string::npos) newline = payload.size();
      std::string line = payload.substr(start, newline - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(std::move(line));
      start = newline + 1;
    }
  }
  if (lines.size() != texts.size())
    throw ProtocolViolationError("expected " + std::to_string(texts.size()) +
                                 " embedding lines, got " + std::to_string(lines.size()));

  std::vector<EmbeddingVector> out;
  out.reserve(lines.size());
  std::size_t dim = 0;
  for (const auto& line : lines) {
    auto values = detail::parse_vector_line(line);
    if (values.empty()) throw ProtocolViolationError("empty embedding line");
    if (dim == 0) dim = values.size();
    if (values.size() != dim)
      throw ProtocolViolationError("embedding dimension changed from " + std::to_string(dim) +
                                   " to " + std::to_string(values.size()));
    const double norm = l2_norm(values);
    if (norm < 1e-12)
      throw DegenerateEmbeddingError("remote encoder returned a zero vector");
    for (double& v : values) v /= norm;
    out.push_back(EmbeddingVector{std::move(values)});
  }
  return out;
}

class RemoteTextEncoder final : public TextEncoder {
public:
  explicit RemoteTextEncoder(std::string endpoint, std::size_t chunk_size = 64)
      : endpoint_(std::move(endpoint)), chunk_size_(chunk_size) {}

  EmbeddingVector encode_text(const std::string& text) const override {
    auto vectors = remote_encode(endpoint_, {text});
    check_session_dim(vectors[0].dim());
    return std::move(vectors[0]);
  }

  std::vector<EmbeddingVector> encode_texts(const std::vector<std::string>& texts) const override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += chunk_size_) {
      const std::size_t end = std::min(start + chunk_size_, texts.size());
      std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                     texts.begin() + static_cast<std::ptrdiff_t>(end));
      for (auto& vec : remote_encode(endpoint_, chunk)) {
        check_session_dim(vec.dim());
        out.push_back(std::move(vec));
      }
    }
    return out;
  }

private:
  void check_session_dim(std::size_t dim) const {
    if (session_dim_ == 0) session_dim_ = dim;
    if (dim != session_dim_)
      throw ProtocolViolationError("embedding dimension changed mid-session: " +
                                   std::to_string(session_dim_) + " -> " + std::to_string(dim));
  }

  std::string endpoint_;
  std::size_t chunk_size_;
  mutable std::size_t session_dim_ = 0;
};

}  // namespace pesco
