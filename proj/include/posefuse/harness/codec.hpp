#pragma once

// Binary wire format, little-endian throughout:
//   u32 payload length | u8 version | u32 device id | u64 capture time (us)
//   | u16 person count | count x 12 slots { u8 present, f32 x, f32 y, f32 z, f32 confidence }

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "posefuse/keypoints.hpp"

namespace posefuse::harness {

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderBytes = 1 + 4 + 8 + 2;
inline constexpr std::size_t kSlotBytes = 1 + 4 * 4;
inline constexpr std::size_t kPersonBytes = kNumKeypoints * kSlotBytes;
inline constexpr std::size_t kMaxPayload = kHeaderBytes + 0xFFFF * kPersonBytes;

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncatedFrame : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

class VersionMismatch : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

class BadLength : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

namespace detail {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts need byte swapping");
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> in, std::size_t& pos) {
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

/// Encodes one device message. Coordinates and confidences are narrowed to
/// float; the round trip is exact for float-representable values.
inline std::vector<std::uint8_t> encode(const MeasurementBatch& m) {
  if (m.persons.size() > 0xFFFF) throw std::invalid_argument("too many persons in one message");
  std::vector<std::uint8_t> out;
  const auto payload = static_cast<std::uint32_t>(kHeaderBytes + m.persons.size() * kPersonBytes);
  out.reserve(4 + payload);
  detail::put(out, payload);
  detail::put(out, kWireVersion);
  detail::put(out, m.device_id);
  detail::put(out, m.stamp.micros);
  detail::put(out, static_cast<std::uint16_t>(m.persons.size()));
  for (const auto& p : m.persons) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      const bool present = p.present.test(i);
      detail::put(out, static_cast<std::uint8_t>(present));
      const Vec3 x = present ? p.position[i] : Vec3::Zero();
      detail::put(out, static_cast<float>(x.x()));
      detail::put(out, static_cast<float>(x.y()));
      detail::put(out, static_cast<float>(x.z()));
      detail::put(out, static_cast<float>(present ? p.confidence[i] : 0.0));
    }
  }
  return out;
}

/// Size of the complete frame starting at `in`, or 0 if the length prefix
/// itself is incomplete. Throws BadLength on an impossible prefix.
inline std::size_t frame_size(std::span<const std::uint8_t> in) {
  if (in.size() < 4) return 0;
  std::size_t pos = 0;
  const auto len = detail::get<std::uint32_t>(in, pos);
  if (len < kHeaderBytes || len > kMaxPayload || (len - kHeaderBytes) % kPersonBytes != 0)
    throw BadLength("length prefix " + std::to_string(len) + " is not a valid payload size");
  return 4 + len;
}

/// Decodes exactly one frame occupying all of `in`.
inline MeasurementBatch decode(std::span<const std::uint8_t> in) {
  if (in.size() < 4) throw TruncatedFrame("frame shorter than its length prefix");
  const std::size_t total = frame_size(in);
  if (in.size() < total) throw TruncatedFrame("frame holds " + std::to_string(in.size()) + " of " + std::to_string(total) + " bytes");
  if (in.size() > total) throw BadLength("frame carries " + std::to_string(in.size() - total) + " bytes past its length prefix");
  std::size_t pos = 4;
  const auto version = detail::get<std::uint8_t>(in, pos);
  if (version != kWireVersion) throw VersionMismatch("unsupported wire version " + std::to_string(version));
  MeasurementBatch m;
  m.device_id = detail::get<std::uint32_t>(in, pos);
  m.stamp.micros = detail::get<std::uint64_t>(in, pos);
  const auto count = detail::get<std::uint16_t>(in, pos);
  if (total != 4 + kHeaderBytes + count * kPersonBytes)
    throw BadLength("person count " + std::to_string(count) + " disagrees with the length prefix");
  m.persons.resize(count);
  for (auto& p : m.persons) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      const auto present = detail::get<std::uint8_t>(in, pos);
      const float x = detail::get<float>(in, pos), y = detail::get<float>(in, pos), z = detail::get<float>(in, pos);
      const float c = detail::get<float>(in, pos);
      if (present) p.set(label_at(i), Vec3(x, y, z), c);
    }
  }
  return m;
}

/// Incremental reader for a byte stream of concatenated frames.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  /// Next complete frame, if buffered.
  std::optional<MeasurementBatch> next() {
    const std::size_t n = frame_size(buf_);
    if (n == 0 || buf_.size() < n) return std::nullopt;
    auto m = decode(std::span<const std::uint8_t>(buf_.data(), n));
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(n));
    return m;
  }

  std::size_t buffered() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// 64-bit FNV-1a, used to fingerprint generated streams.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 14695981039346656037ull) {
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace posefuse::harness
