#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "pfedlvm/bytes.hpp"
#include "pfedlvm/nn.hpp"
#include "pfedlvm/tensor.hpp"

namespace pfedlvm {

enum class MessageKind : std::uint8_t {
  CompressedFeatures = 1,  // vehicle -> server
  SharedFeatures = 2,      // server -> vehicle
  ParameterUp = 3,         // baseline client -> server
  ParameterDown = 4,       // baseline server -> client
};

std::string to_string(MessageKind kind);

/// What the payload was derived from. Set by the producer; never on the wire.
enum class Provenance : std::uint8_t { Feature, Parameter };

inline constexpr std::uint32_t kBroadcastVehicle = 0xFFFFFFFFu;
inline constexpr std::uint8_t kWireVersion = 1;

struct Message {
  MessageKind kind = MessageKind::CompressedFeatures;
  std::uint64_t round_index = 0;
  std::uint32_t vehicle_id = 0;  // sender for uploads, recipient for downloads
  Tensor payload;
  std::size_t payload_bytes = 0;
  Provenance provenance = Provenance::Feature;
};

Message make_message(MessageKind kind, std::uint64_t round, std::uint32_t vehicle, Tensor payload,
                     Provenance provenance);

/// Wire layout: "PFLM" | version u8 | kind u8 | round u64 | vehicle u32 |
/// rank u8 | dims u64 x rank | payload f64 x numel, all little-endian.
Bytes encode_message(const Message& msg);
Message decode_message(std::span<const std::uint8_t> bytes);
std::size_t header_bytes(std::size_t rank);

/// Tensor alone in the wire's payload encoding.
Bytes encode_payload(const Tensor& t);

/// Record of every message that crossed the simulated link. Thread-safe.
class MessageLog {
 public:
  struct Entry {
    MessageKind kind;
    std::uint64_t round_index;
    std::uint32_t vehicle_id;
    std::size_t payload_bytes;
    Provenance provenance;
    Bytes encoded;  // empty unless keep_bytes
  };

  explicit MessageLog(bool keep_bytes = false) : keep_bytes_(keep_bytes) {}
  MessageLog(const MessageLog&) = delete;
  MessageLog& operator=(const MessageLog&) = delete;

  void record(const Message& msg);

  /// Entries sorted by (round, kind, vehicle).
  std::vector<Entry> entries() const;
  std::size_t total_payload_bytes(MessageKind kind) const;
  std::size_t total_payload_bytes() const;
  std::size_t count() const;
  bool keeps_bytes() const { return keep_bytes_; }

 private:
  mutable std::mutex mutex_;
  bool keep_bytes_;
  std::vector<Entry> entries_;
};

struct PrivacyAudit {
  std::size_t messages = 0;
  std::size_t parameter_tagged = 0;   // entries whose provenance is Parameter
  std::size_t parameter_matches = 0;  // parameter tensors found byte-for-byte in encoded messages
  bool clean() const { return parameter_tagged == 0 && parameter_matches == 0; }
};

/// Scans the log for parameter payloads. The byte-level scan needs a log
/// created with keep_bytes.
PrivacyAudit audit_parameter_privacy(const MessageLog& log, const std::vector<const ModelParams*>& models);

}  // namespace pfedlvm
