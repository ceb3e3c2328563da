#pragma once

// Wire format between the parameter server and its clients.
//
// Frame:   4-byte big-endian payload length, then that many bytes of UTF-8 JSON.
// Payload: one JSON object with a "type" field:
//   hello      {client_id: string, shard_size: integer}
//   model_down {t: integer, h_assign: integer, weights: string}
//   model_up   {tau: integer, client_id: string, weights: string}
//   bye        {}
//   error      {code: string, detail: string}
// weights is standard padded base64 of the parameters as consecutive
// little-endian IEEE-754 binary64 values in coordinate order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedasync/core.hpp"

namespace fedasync::net {

inline constexpr std::uint16_t kDefaultPort = 7070;
/// Frames larger than this are rejected before allocation.
inline constexpr std::uint32_t kMaxFrameBytes = 256u * 1024u * 1024u;

struct Hello {
  ClientId client_id;
  std::uint64_t shard_size = 0;
  bool operator==(const Hello&) const = default;
};

struct ModelDown {
  Epoch t = 0;
  int h_assign = 0;
  ParamVector weights;
  bool operator==(const ModelDown&) const = default;
};

struct ModelUp {
  Epoch tau = 0;
  ClientId client_id;
  ParamVector weights;
  bool operator==(const ModelUp&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

struct ErrorMessage {
  std::string code;
  std::string detail;
  bool operator==(const ErrorMessage&) const = default;
};

using Message = std::variant<Hello, ModelDown, ModelUp, Bye, ErrorMessage>;

std::string_view message_type(const Message& m);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ProtocolError("invalid_base64") on bad alphabet, length or padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string encode_weights(const ParamVector& w);
/// Throws ProtocolError on invalid base64, a byte count not divisible by 8,
/// or non-finite values.
ParamVector decode_weights(std::string_view text);

std::string encode_payload(const Message& m);
/// Throws ProtocolError for malformed JSON, missing fields or unknown types.
Message decode_payload(std::string_view json_text);

std::vector<std::uint8_t> encode_frame(const Message& m);
/// Decodes exactly one frame occupying all of `bytes`.
Message decode_frame(std::span<const std::uint8_t> bytes);

/// Big-endian length prefix helpers.
std::uint32_t read_length_prefix(std::span<const std::uint8_t, 4> header);

}  // namespace fedasync::net
