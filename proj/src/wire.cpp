#include "pfedlvm/wire.hpp"

#include <algorithm>
#include <functional>
#include <tuple>

namespace pfedlvm {

std::string to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::CompressedFeatures: return "CompressedFeatures";
    case MessageKind::SharedFeatures: return "SharedFeatures";
    case MessageKind::ParameterUp: return "ParameterUp";
    case MessageKind::ParameterDown: return "ParameterDown";
  }
  return "?";
}

Message make_message(MessageKind kind, std::uint64_t round, std::uint32_t vehicle, Tensor payload,
                     Provenance provenance) {
  Message m;
  m.kind = kind;
  m.round_index = round;
  m.vehicle_id = vehicle;
  m.payload_bytes = serialized_byte_size(payload);
  m.payload = std::move(payload);
  m.provenance = provenance;
  return m;
}

std::size_t header_bytes(std::size_t rank) { return 4 + 1 + 1 + 8 + 4 + 1 + 8 * rank; }

Bytes encode_payload(const Tensor& t) {
  ByteWriter w;
  w.f64s(t.data());
  return w.take();
}

Bytes encode_message(const Message& msg) {
  if (msg.payload.rank() == 0 || msg.payload.rank() > 255) throw FormatError("message payload rank out of range");
  ByteWriter w;
  w.tag("PFLM");
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(msg.kind));
  w.u64(msg.round_index);
  w.u32(msg.vehicle_id);
  w.u8(static_cast<std::uint8_t>(msg.payload.rank()));
  for (auto d : msg.payload.shape()) w.u64(d);
  w.f64s(msg.payload.data());
  return w.take();
}

Message decode_message(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("PFLM", "message");
  if (const auto v = r.u8(); v != kWireVersion) throw FormatError("message: unsupported version " + std::to_string(v));
  const auto kind = r.u8();
  if (kind < 1 || kind > 4) throw FormatError("message: unknown kind " + std::to_string(kind));
  Message m;
  m.kind = static_cast<MessageKind>(kind);
  m.round_index = r.u64();
  m.vehicle_id = r.u32();
  const auto rank = r.u8();
  if (rank == 0) throw FormatError("message: zero-rank payload");
  Shape shape;
  std::size_t numel = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto d = r.u64();
    if (d == 0) throw FormatError("message: zero dimension");
    shape.push_back(d);
    numel *= d;
  }
  m.payload = Tensor(std::move(shape), r.f64s(numel));
  if (r.remaining() != 0) throw FormatError("message: trailing bytes");
  m.payload_bytes = serialized_byte_size(m.payload);
  m.provenance = (m.kind == MessageKind::ParameterUp || m.kind == MessageKind::ParameterDown) ? Provenance::Parameter
                                                                                              : Provenance::Feature;
  return m;
}

void MessageLog::record(const Message& msg) {
  Entry e{msg.kind, msg.round_index, msg.vehicle_id, msg.payload_bytes, msg.provenance, {}};
  if (keep_bytes_) e.encoded = encode_message(msg);
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(e));
}

std::vector<MessageLog::Entry> MessageLog::entries() const {
  std::vector<Entry> out;
  {
    std::lock_guard lock(mutex_);
    out = entries_;
  }
  std::stable_sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.round_index, a.kind, a.vehicle_id) < std::tie(b.round_index, b.kind, b.vehicle_id);
  });
  return out;
}

std::size_t MessageLog::total_payload_bytes(MessageKind kind) const {
  std::lock_guard lock(mutex_);
  std::size_t total = 0;
  for (const auto& e : entries_) {
    if (e.kind == kind) total += e.payload_bytes;
  }
  return total;
}

std::size_t MessageLog::total_payload_bytes() const {
  std::lock_guard lock(mutex_);
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.payload_bytes;
  return total;
}

std::size_t MessageLog::count() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

PrivacyAudit audit_parameter_privacy(const MessageLog& log, const std::vector<const ModelParams*>& models) {
  PrivacyAudit audit;
  const auto entries = log.entries();
  audit.messages = entries.size();
  std::vector<Bytes> needles;
  for (const auto* model : models) {
    for (const auto* p : model->parameters()) needles.push_back(encode_payload(*p));
  }
  for (const auto& e : entries) {
    if (e.provenance == Provenance::Parameter) ++audit.parameter_tagged;
    if (e.encoded.empty()) continue;
    for (const auto& needle : needles) {
      const auto it = std::search(e.encoded.begin(), e.encoded.end(),
                                  std::boyer_moore_horspool_searcher(needle.begin(), needle.end()));
      if (it != e.encoded.end()) ++audit.parameter_matches;
    }
  }
  return audit;
}

}  // namespace pfedlvm
