#pragma once

// Protocol messages and their framed binary encoding:
//   u8 kind | u32 sender | u32 round | u64 count | count x f64, all little-endian.

#include "fedrf/core.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>
#include <vector>

namespace fedrf {

enum class MessageKind : std::uint8_t { summed_feature = 1, layer_weights = 2, classifier_weights = 3 };

inline constexpr std::size_t kMessageKinds = 3;

inline std::size_t kind_index(MessageKind kind) { return static_cast<std::size_t>(kind) - 1; }

inline const char* kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::summed_feature:
      return "summed_feature";
    case MessageKind::layer_weights:
      return "layer_weights";
    case MessageKind::classifier_weights:
      return "classifier_weights";
  }
  return "unknown";
}

/// Client 0 is the target, 1..K the sources.
inline constexpr std::uint32_t kTargetId = 0;
/// Pseudo-recipients: the aggregation server and the target's broadcast.
inline constexpr std::uint32_t kServerId = 0xFFFFFFFFu;
inline constexpr std::uint32_t kAllSources = 0xFFFFFFFEu;

struct ProtocolMessage {
  MessageKind kind = MessageKind::summed_feature;
  std::uint32_t sender = 0;
  std::uint32_t round = 0;
  std::uint32_t recipient = kTargetId;  // routing only, not part of the frame
  Vector payload;                       // matrices are flattened column-major

  std::size_t volume() const noexcept { return static_cast<std::size_t>(payload.size()); }
};

inline constexpr std::size_t kFrameHeader = 1 + 4 + 4 + 8;

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T get_le(const std::uint8_t* in) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const ProtocolMessage& msg) {
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeader + 8 * msg.volume());
  out.push_back(static_cast<std::uint8_t>(msg.kind));
  detail::put_le<std::uint32_t>(out, msg.sender);
  detail::put_le<std::uint32_t>(out, msg.round);
  detail::put_le<std::uint64_t>(out, msg.volume());
  for (Index i = 0; i < msg.payload.size(); ++i) detail::put_le<double>(out, msg.payload(i));
  return out;
}

inline ProtocolMessage decode(const std::vector<std::uint8_t>& frame) {
  if (frame.size() < kFrameHeader) throw FormatError("decode: frame shorter than header");
  const std::uint8_t kind = frame[0];
  if (kind < 1 || kind > kMessageKinds) throw FormatError("decode: unknown message kind " + std::to_string(kind));
  ProtocolMessage msg;
  msg.kind = static_cast<MessageKind>(kind);
  msg.sender = detail::get_le<std::uint32_t>(frame.data() + 1);
  msg.round = detail::get_le<std::uint32_t>(frame.data() + 5);
  const auto count = detail::get_le<std::uint64_t>(frame.data() + 9);
  if (frame.size() != kFrameHeader + 8 * count) throw FormatError("decode: payload length does not match count");
  msg.payload.resize(static_cast<Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    msg.payload(static_cast<Index>(i)) = detail::get_le<double>(frame.data() + kFrameHeader + 8 * i);
  }
  return msg;
}

inline Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unflatten(const Vector& v, Index rows, Index cols) {
  require_shape(v.size() == rows * cols, "unflatten: payload has " + std::to_string(v.size()) + " entries, expected " +
                                             std::to_string(rows * cols));
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace fedrf
