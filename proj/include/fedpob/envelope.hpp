#pragma once

// Transport-independent messages and their binary framing.
//
// Frame layout, all integers little-endian:
//
//   offset  size  field
//   0       4     magic "FDPB"
//   4       1     version (1)
//   5       1     msg_type
//   6       4     payload length in bytes (8 * number of reals)
//   10      4     agent_id
//   14      8     round
//   22      4     d
//   26      ...   payload: IEEE 754 binary64 reals
//
// Matrices travel as full row-major d*d blocks.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fedpob/errors.hpp"
#include "fedpob/linalg.hpp"

namespace fedpob::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'F', 'D', 'P', 'B'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 26;
inline constexpr std::size_t kLengthOffset = 6;

enum class MsgType : std::uint8_t {
  hello = 1,
  sync_request = 2,
  delta_upload = 3,
  sync_broadcast = 4,
  pref_upload = 5,
  model_broadcast = 6,
  bye = 7,
};

inline const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::sync_request: return "SYNC_REQUEST";
    case MsgType::delta_upload: return "DELTA_UPLOAD";
    case MsgType::sync_broadcast: return "SYNC_BROADCAST";
    case MsgType::pref_upload: return "PREF_UPLOAD";
    case MsgType::model_broadcast: return "MODEL_BROADCAST";
    case MsgType::bye: return "BYE";
  }
  return "UNKNOWN";
}

inline bool is_known(std::uint8_t raw) { return raw >= 1 && raw <= 7; }

// Number of reals each message carries for dimension d.
//   SYNC_REQUEST       1          (flag: 1 = request / start a round, 0 = no)
//   DELTA_UPLOAD       d*d + d    (W_new, b_new)
//   SYNC_BROADCAST     d*d + d    (W_sync, b_sync)
//   PREF_UPLOAD        2d + d*d   (theta_local, drift_grad, W_new)
//   MODEL_BROADCAST    d + d*d    (theta_global, W_sync)
//   HELLO, BYE         0
inline std::uint64_t payload_reals(MsgType t, std::uint64_t d) {
  switch (t) {
    case MsgType::hello:
    case MsgType::bye: return 0;
    case MsgType::sync_request: return 1;
    case MsgType::delta_upload:
    case MsgType::sync_broadcast: return d * d + d;
    case MsgType::pref_upload: return 2 * d + d * d;
    case MsgType::model_broadcast: return d + d * d;
  }
  return 0;
}

struct SyncEnvelope {
  MsgType type = MsgType::hello;
  std::uint32_t agent_id = 0;
  std::uint64_t round = 0;
  std::uint32_t d = 0;
  std::vector<double> payload;

  std::size_t payload_bytes() const { return payload.size() * sizeof(double); }

  bool operator==(const SyncEnvelope&) const = default;
};

namespace detail {

template <class T>
std::size_t put_le(std::span<std::uint8_t> out, std::size_t offset, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
  return offset + sizeof(T);
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[offset + i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void validate(const SyncEnvelope& e) {
  if (e.payload.size() != payload_reals(e.type, e.d)) {
    throw Error(std::string("envelope: ") + to_string(e.type) + " with d=" + std::to_string(e.d) +
                " needs " + std::to_string(payload_reals(e.type, e.d)) + " reals, has " +
                std::to_string(e.payload.size()));
  }
}

inline std::vector<std::uint8_t> encode_envelope(const SyncEnvelope& e) {
  validate(e);
  std::vector<std::uint8_t> out(kHeaderSize + e.payload_bytes());
  std::copy(kMagic.begin(), kMagic.end(), out.begin());
  out[4] = kVersion;
  out[5] = static_cast<std::uint8_t>(e.type);
  std::size_t at = kLengthOffset;
  at = detail::put_le<std::uint32_t>(out, at, static_cast<std::uint32_t>(e.payload_bytes()));
  at = detail::put_le<std::uint32_t>(out, at, e.agent_id);
  at = detail::put_le<std::uint64_t>(out, at, e.round);
  at = detail::put_le<std::uint32_t>(out, at, e.d);
  for (double x : e.payload) at = detail::put_le<std::uint64_t>(out, at, std::bit_cast<std::uint64_t>(x));
  return out;
}

struct FrameHeader {
  MsgType type = MsgType::hello;
  std::uint32_t payload_len = 0;
  std::uint32_t agent_id = 0;
  std::uint64_t round = 0;
  std::uint32_t d = 0;
};

// Validates the fixed 26-byte prefix, including that the announced payload
// length matches the schema for (type, d).
inline FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw MalformedFrame("truncated header", bytes.size());
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (bytes[i] != kMagic[i]) throw MalformedFrame("bad magic", i);
  }
  if (bytes[4] != kVersion) throw MalformedFrame("unsupported version " + std::to_string(bytes[4]), 4);
  if (!is_known(bytes[5])) throw MalformedFrame("unknown msg_type " + std::to_string(bytes[5]), 5);
  FrameHeader h;
  h.type = static_cast<MsgType>(bytes[5]);
  h.payload_len = detail::get_le<std::uint32_t>(bytes, kLengthOffset);
  h.agent_id = detail::get_le<std::uint32_t>(bytes, 10);
  h.round = detail::get_le<std::uint64_t>(bytes, 14);
  h.d = detail::get_le<std::uint32_t>(bytes, 22);
  const std::uint64_t expected = payload_reals(h.type, h.d) * sizeof(double);
  if (h.payload_len != expected) {
    throw MalformedFrame(std::string("payload length ") + std::to_string(h.payload_len) + " does not match " +
                             to_string(h.type) + " schema (" + std::to_string(expected) + " bytes)",
                         kLengthOffset);
  }
  return h;
}

inline SyncEnvelope decode_payload(const FrameHeader& h, std::span<const std::uint8_t> payload,
                                   std::size_t base_offset = kHeaderSize) {
  if (payload.size() != h.payload_len) {
    throw MalformedFrame("payload has " + std::to_string(payload.size()) + " bytes, header says " +
                             std::to_string(h.payload_len),
                         base_offset + std::min<std::size_t>(payload.size(), h.payload_len));
  }
  SyncEnvelope e{h.type, h.agent_id, h.round, h.d, {}};
  e.payload.resize(h.payload_len / sizeof(double));
  for (std::size_t i = 0; i < e.payload.size(); ++i) {
    e.payload[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(payload, i * sizeof(double)));
  }
  return e;
}

inline SyncEnvelope decode_envelope(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = decode_header(bytes);
  const std::size_t total = kHeaderSize + h.payload_len;
  if (bytes.size() < total) throw MalformedFrame("truncated payload", bytes.size());
  if (bytes.size() > total) throw MalformedFrame("trailing bytes after frame", total);
  return decode_payload(h, bytes.subspan(kHeaderSize), kHeaderSize);
}

// Payload packing helpers.

inline void append(std::vector<double>& out, const Vector& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

inline void append(std::vector<double>& out, const SymMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
}

class PayloadReader {
 public:
  PayloadReader(const SyncEnvelope& e) : data_(e.payload), d_(e.d) {}

  Vector vector() {
    take(d_);
    Vector v(d_);
    for (std::uint32_t i = 0; i < d_; ++i) v[i] = data_[pos_ - d_ + i];
    return v;
  }

  SymMatrix matrix() {
    const std::size_t n = static_cast<std::size_t>(d_) * d_;
    take(n);
    SymMatrix m(d_, d_);
    std::size_t k = pos_ - n;
    for (std::uint32_t i = 0; i < d_; ++i)
      for (std::uint32_t j = 0; j < d_; ++j) m(i, j) = data_[k++];
    return m;
  }

  double scalar() {
    take(1);
    return data_[pos_ - 1];
  }

 private:
  void take(std::size_t n) {
    if (pos_ + n > data_.size()) throw Error("envelope payload shorter than its schema");
    pos_ += n;
  }

  std::span<const double> data_;
  std::uint32_t d_;
  std::size_t pos_ = 0;
};

}  // namespace fedpob::wire
