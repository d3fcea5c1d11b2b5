#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fedpob/envelope.hpp"

using namespace fedpob;
using namespace fedpob::wire;

namespace {

const MsgType kAllTypes[] = {MsgType::hello,        MsgType::sync_request, MsgType::delta_upload,
                             MsgType::sync_broadcast, MsgType::pref_upload,  MsgType::model_broadcast,
                             MsgType::bye};

SyncEnvelope random_envelope(std::mt19937_64& rng, MsgType type, std::uint32_t d) {
  SyncEnvelope e{type, static_cast<std::uint32_t>(rng()), rng(), d, {}};
  e.payload.resize(payload_reals(type, d));
  for (double& x : e.payload) x = std::bit_cast<double>(rng() & 0x7fefffffffffffffULL);
  return e;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Envelope, SchemaArithmetic) {
  for (std::uint64_t d : {1u, 2u, 16u}) {
    EXPECT_EQ(payload_reals(MsgType::hello, d), 0u);
    EXPECT_EQ(payload_reals(MsgType::bye, d), 0u);
    EXPECT_EQ(payload_reals(MsgType::sync_request, d), 1u);
    EXPECT_EQ(payload_reals(MsgType::delta_upload, d), d * d + d);
    EXPECT_EQ(payload_reals(MsgType::sync_broadcast, d), d * d + d);
    EXPECT_EQ(payload_reals(MsgType::pref_upload, d), 2 * d + d * d);
    EXPECT_EQ(payload_reals(MsgType::model_broadcast, d), d + d * d);
  }
}

TEST(Envelope, DeltaUploadLayout) {
  std::vector<double> payload;
  append(payload, SymMatrix(SymMatrix::Identity(2, 2)));
  append(payload, Vector{{1.0, 2.0}});
  ASSERT_EQ(payload.size(), 6u);
  const SyncEnvelope e{MsgType::delta_upload, 3, 9, 2, payload};
  const auto bytes = encode_envelope(e);
  ASSERT_EQ(bytes.size(), kHeaderSize + 6 * 8);
  EXPECT_EQ(bytes[0], 'F');
  EXPECT_EQ(bytes[1], 'D');
  EXPECT_EQ(bytes[2], 'P');
  EXPECT_EQ(bytes[3], 'B');
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 3);
  // Little-endian payload length.
  EXPECT_EQ(bytes[6], 48);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[8], 0);
  EXPECT_EQ(bytes[9], 0);
  // The last real is 2.0 = 0x4000000000000000.
  EXPECT_EQ(bytes.back(), 0x40);

  const SyncEnvelope back = decode_envelope(bytes);
  EXPECT_EQ(back, e);
  PayloadReader r(back);
  EXPECT_EQ(r.matrix(), SymMatrix::Identity(2, 2));
  EXPECT_EQ(r.vector(), (Vector{{1.0, 2.0}}));
  EXPECT_THROW(r.scalar(), Error);
}

TEST(Envelope, RoundTripsEveryTypeBitExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    for (MsgType t : kAllTypes) {
      const SyncEnvelope e = random_envelope(rng, t, 1 + static_cast<std::uint32_t>(rng() % 12));
      const SyncEnvelope back = decode_envelope(encode_envelope(e));
      EXPECT_EQ(back.type, e.type);
      EXPECT_EQ(back.agent_id, e.agent_id);
      EXPECT_EQ(back.round, e.round);
      EXPECT_EQ(back.d, e.d);
      EXPECT_TRUE(bit_equal(back.payload, e.payload));
    }
  }
}

TEST(Envelope, SpecialValuesSurvive) {
  const double inf = std::numeric_limits<double>::infinity();
  const SyncEnvelope e{MsgType::model_broadcast, 0, 1, 1, {-0.0, std::numeric_limits<double>::denorm_min()}};
  const SyncEnvelope back = decode_envelope(encode_envelope(e));
  EXPECT_TRUE(bit_equal(back.payload, e.payload));
  EXPECT_TRUE(std::signbit(back.payload[0]));
  const SyncEnvelope f{MsgType::sync_request, 0, 1, 4, {inf}};
  EXPECT_EQ(decode_envelope(encode_envelope(f)).payload[0], inf);
}

TEST(Envelope, EncodeRejectsSchemaViolations) {
  EXPECT_THROW(encode_envelope(SyncEnvelope{MsgType::delta_upload, 0, 0, 2, std::vector<double>(5)}), Error);
  EXPECT_THROW(encode_envelope(SyncEnvelope{MsgType::hello, 0, 0, 2, {1.0}}), Error);
}

TEST(Envelope, TruncatedFrames) {
  std::mt19937_64 rng(2);
  const auto bytes = encode_envelope(random_envelope(rng, MsgType::pref_upload, 3));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(decode_envelope(cut), MalformedFrame) << "prefix " << n;
  }
}

TEST(Envelope, CorruptedHeaders) {
  const auto good = encode_envelope(SyncEnvelope{MsgType::sync_request, 1, 2, 3, {1.0}});
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_envelope(bad), MalformedFrame);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(decode_envelope(bad), MalformedFrame);
  for (std::uint8_t t : {0, 8, 255}) {
    bad = good;
    bad[5] = t;
    try {
      decode_envelope(bad);
      FAIL();
    } catch (const MalformedFrame& e) {
      EXPECT_EQ(e.offset, 5u);
    }
  }
  bad = good;
  bad[6] = 16;  // announces 2 reals where the schema wants 1
  EXPECT_THROW(decode_envelope(bad), MalformedFrame);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(decode_envelope(bad), MalformedFrame);
}

TEST(Envelope, DecodeHeaderAlone) {
  const auto bytes = encode_envelope(SyncEnvelope{MsgType::bye, 7, 50, 16, {}});
  ASSERT_EQ(bytes.size(), kHeaderSize);
  const FrameHeader h = decode_header(bytes);
  EXPECT_EQ(h.type, MsgType::bye);
  EXPECT_EQ(h.agent_id, 7u);
  EXPECT_EQ(h.round, 50u);
  EXPECT_EQ(h.d, 16u);
  EXPECT_EQ(h.payload_len, 0u);
}
