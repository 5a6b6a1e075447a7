#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lodvol/core.hpp"

namespace lodvol::proto {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 5;
inline constexpr std::uint32_t kMaxPayload = 256u << 20;

enum class Type : std::uint8_t {
    hello = 0x01,
    open = 0x02,
    dataset_info = 0x03,
    set_spec = 0x10,
    cut_delta = 0x11,
    result_mesh = 0x20,
    node_done = 0x21,
    abort_ack = 0x22,
    stats = 0x30,
    error = 0x7F,
};

enum class ErrorCode : std::uint16_t {
    malformed = 1,
    unsupported_protocol = 2,
    version_not_monotone = 3,
    unknown_dataset = 4,
    extraction_failed = 5,
    invalid_node = 6,
};

/// Identifies one unit of work and every frame produced for it.
struct WorkKey {
    std::uint32_t version = 0;
    std::uint32_t timestep = 0;
    NodeId node;

    std::string to_string() const;
    friend auto operator<=>(const WorkKey&, const WorkKey&) = default;
};

struct Hello {
    std::uint16_t protocol = kProtocolVersion;
    friend bool operator==(const Hello&, const Hello&) = default;
};

struct Open {
    std::string dataset;
    friend bool operator==(const Open&, const Open&) = default;
};

struct DatasetInfo {
    DatasetMeta meta;
    friend bool operator==(const DatasetInfo&, const DatasetInfo&) = default;
};

struct WireLimit {
    std::uint8_t field = 0;
    float lower = 0.0f;
    float upper = 0.0f;
    friend bool operator==(const WireLimit&, const WireLimit&) = default;
};

struct WireSubVolume {
    std::uint8_t id = 0;
    std::vector<WireLimit> limits;
    friend bool operator==(const WireSubVolume&, const WireSubVolume&) = default;
};

struct SetSpec {
    std::uint32_t version = 0;
    std::vector<WireSubVolume> subvolumes;
    friend bool operator==(const SetSpec&, const SetSpec&) = default;
};

struct CutDeltaMsg {
    std::uint32_t version = 0;
    std::uint32_t timestep = 0;
    CutDelta delta;
    friend bool operator==(const CutDeltaMsg&, const CutDeltaMsg&) = default;
};

struct ResultMeshMsg {
    ResultMesh mesh;  // key fields live in the mesh
    WorkKey key() const { return {mesh.spec_version, mesh.timestep, mesh.node}; }
    friend bool operator==(const ResultMeshMsg&, const ResultMeshMsg&) = default;
};

struct NodeDone {
    WorkKey key;
    friend bool operator==(const NodeDone&, const NodeDone&) = default;
};

struct AbortAck {
    std::uint32_t version = 0;
    friend bool operator==(const AbortAck&, const AbortAck&) = default;
};

struct Stats {
    std::uint32_t pending = 0;
    std::uint32_t running = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t cache_misses = 0;
    friend bool operator==(const Stats&, const Stats&) = default;
};

struct ErrorMsg {
    ErrorCode code = ErrorCode::malformed;
    std::string message;
    friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

using Message = std::variant<Hello, Open, DatasetInfo, SetSpec, CutDeltaMsg, ResultMeshMsg, NodeDone, AbortAck, Stats,
                             ErrorMsg>;

Type type_of(const Message& m);

/// Full frame: u32 LE payload length, u8 type, payload.
std::vector<std::uint8_t> encode(const Message& m);

/// Decodes one payload of the given type. Throws ProtocolError on any inconsistency,
/// including trailing bytes.
Message decode(std::uint8_t type, std::span<const std::uint8_t> payload);

/// Decodes exactly one complete frame.
Message decode_frame(std::span<const std::uint8_t> frame);

/// Payload length announced by a 5-byte header; validates the bound.
std::uint32_t payload_length(std::span<const std::uint8_t> header);

/// Incremental splitter for a byte stream carrying back-to-back frames.
class FrameBuffer {
public:
    void append(std::span<const std::uint8_t> bytes);
    /// Next complete frame (header included), or empty if more bytes are needed.
    std::vector<std::uint8_t> next();
    std::size_t buffered() const { return data_.size() - start_; }

private:
    std::vector<std::uint8_t> data_;
    std::size_t start_ = 0;
};

/// Wire form of a spec set: field names become indices into the dataset's field table.
SetSpec to_wire(const SpecSet& specs, const DatasetMeta& meta);
SpecSet from_wire(const SetSpec& msg, const DatasetMeta& meta);

}  // namespace lodvol::proto
