#include "fedasync/netproto.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

namespace fedasync::net {

namespace {

using json = nlohmann::json;

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

[[noreturn]] void bad_payload(const std::string& detail) { throw ProtocolError("malformed_message", detail); }

template <typename T>
T field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) bad_payload(std::string("missing field '") + name + "'");
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) bad_payload(std::string("field '") + name + "' must be a string");
    } else {
      if (!it->is_number_integer()) bad_payload(std::string("field '") + name + "' must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<std::int64_t>() < 0) {
          bad_payload(std::string("field '") + name + "' must be non-negative");
        }
      }
    }
    return it->template get<T>();
  } catch (const json::exception& e) {
    bad_payload(std::string("field '") + name + "': " + e.what());
  }
}

}  // namespace

std::string_view message_type(const Message& m) {
  struct Visitor {
    std::string_view operator()(const Hello&) const { return "hello"; }
    std::string_view operator()(const ModelDown&) const { return "model_down"; }
    std::string_view operator()(const ModelUp&) const { return "model_up"; }
    std::string_view operator()(const Bye&) const { return "bye"; }
    std::string_view operator()(const ErrorMessage&) const { return "error"; }
  };
  return std::visit(Visitor{}, m);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = std::uint32_t{bytes[i]} << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ProtocolError("invalid_base64", "length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int pad = 0;
    std::uint32_t v = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const char c = text[i + j];
      int d = 0;
      if (c == '=') {
        if (!last || j < 2) throw ProtocolError("invalid_base64", "misplaced padding");
        ++pad;
      } else {
        if (pad > 0) throw ProtocolError("invalid_base64", "data after padding");
        d = decode_char(c);
        if (d < 0) throw ProtocolError("invalid_base64", std::string("invalid character '") + c + "'");
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
    // Canonical form: discarded bits must be zero.
    if ((pad == 1 && (v & 0xFF) != 0) || (pad == 2 && (v & 0xFFFF) != 0)) {
      throw ProtocolError("invalid_base64", "non-zero padding bits");
    }
  }
  return out;
}

std::string encode_weights(const ParamVector& w) {
  std::vector<std::uint8_t> bytes(w.dim() * 8);
  for (std::size_t i = 0; i < w.dim(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(w[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

ParamVector decode_weights(std::string_view text) {
  const std::vector<std::uint8_t> bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) {
    throw ProtocolError("invalid_weights", "weight byte count " + std::to_string(bytes.size()) +
                                               " is not divisible by 8");
  }
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + static_cast<std::size_t>(b)]} << (8 * b);
    values[i] = std::bit_cast<double>(bits);
    if (!std::isfinite(values[i])) {
      throw ProtocolError("invalid_weights", "non-finite weight at coordinate " + std::to_string(i));
    }
  }
  return ParamVector(std::move(values));
}

std::string encode_payload(const Message& m) {
  json j;
  j["type"] = std::string(message_type(m));
  std::visit(
      [&j](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Hello>) {
          j["client_id"] = msg.client_id;
          j["shard_size"] = msg.shard_size;
        } else if constexpr (std::is_same_v<T, ModelDown>) {
          j["t"] = msg.t;
          j["h_assign"] = msg.h_assign;
          j["weights"] = encode_weights(msg.weights);
        } else if constexpr (std::is_same_v<T, ModelUp>) {
          j["tau"] = msg.tau;
          j["client_id"] = msg.client_id;
          j["weights"] = encode_weights(msg.weights);
        } else if constexpr (std::is_same_v<T, ErrorMessage>) {
          j["code"] = msg.code;
          j["detail"] = msg.detail;
        }
      },
      m);
  return j.dump();
}

Message decode_payload(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    bad_payload(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_payload("payload is not a JSON object");
  const auto type = field<std::string>(j, "type");
  if (type == "hello") {
    return Hello{field<std::string>(j, "client_id"), field<std::uint64_t>(j, "shard_size")};
  }
  if (type == "model_down") {
    return ModelDown{field<Epoch>(j, "t"), field<int>(j, "h_assign"), decode_weights(field<std::string>(j, "weights"))};
  }
  if (type == "model_up") {
    return ModelUp{field<Epoch>(j, "tau"), field<std::string>(j, "client_id"),
                   decode_weights(field<std::string>(j, "weights"))};
  }
  if (type == "bye") return Bye{};
  if (type == "error") return ErrorMessage{field<std::string>(j, "code"), field<std::string>(j, "detail")};
  throw ProtocolError("unknown_type", "unknown message type '" + type + "'");
}

std::vector<std::uint8_t> encode_frame(const Message& m) {
  const std::string payload = encode_payload(m);
  if (payload.size() > kMaxFrameBytes) throw ProtocolError("frame_too_large", "payload exceeds frame limit");
  const auto len = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> frame(4 + payload.size());
  frame[0] = static_cast<std::uint8_t>(len >> 24);
  frame[1] = static_cast<std::uint8_t>(len >> 16);
  frame[2] = static_cast<std::uint8_t>(len >> 8);
  frame[3] = static_cast<std::uint8_t>(len);
  std::memcpy(frame.data() + 4, payload.data(), payload.size());
  return frame;
}

std::uint32_t read_length_prefix(std::span<const std::uint8_t, 4> header) {
  return (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) | (std::uint32_t{header[2]} << 8) |
         std::uint32_t{header[3]};
}

Message decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ProtocolError("truncated_frame", "frame shorter than its length prefix");
  const std::uint32_t len = read_length_prefix(bytes.first<4>());
  if (len > kMaxFrameBytes) throw ProtocolError("frame_too_large", "declared length " + std::to_string(len));
  if (bytes.size() - 4 < len) {
    throw ProtocolError("truncated_frame", "declared " + std::to_string(len) + " payload bytes, have " +
                                               std::to_string(bytes.size() - 4));
  }
  if (bytes.size() - 4 > len) {
    throw ProtocolError("length_mismatch", "declared " + std::to_string(len) + " payload bytes, have " +
                                               std::to_string(bytes.size() - 4));
  }
  const auto* p = reinterpret_cast<const char*>(bytes.data() + 4);
  return decode_payload(std::string_view(p, len));
}

}  // namespace fedasync::net
