#include "lodvol/protocol.hpp"

#include <bit>
#include <cstring>
#include <limits>

namespace lodvol::proto {

namespace {

static_assert(std::endian::native == std::endian::little, "wire encoding assumes a little-endian host");

class Writer {
public:
    explicit Writer(Type type) : out_(kHeaderBytes, 0) { out_[4] = static_cast<std::uint8_t>(type); }

    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { raw(&v, sizeof v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void floats(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
    void node(const NodeId& n) {
        u8(n.level);
        u16(n.ix);
        u16(n.iy);
        u16(n.iz);
    }
    void key(const WorkKey& k) {
        u32(k.version);
        u32(k.timestep);
        node(k.node);
    }
    void str16(std::string_view s) {
        if (s.size() > 0xFFFF) throw Error("string too long for the wire");
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
    void text(std::string_view s) { raw(s.data(), s.size()); }

    std::vector<std::uint8_t> finish() {
        const std::size_t payload = out_.size() - kHeaderBytes;
        if (payload > kMaxPayload) throw Error("frame payload exceeds the size limit");
        const auto len = static_cast<std::uint32_t>(payload);
        std::memcpy(out_.data(), &len, sizeof len);
        return std::move(out_);
    }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }

    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() { return take<std::uint8_t>(); }
    std::uint16_t u16() { return take<std::uint16_t>(); }
    std::uint32_t u32() { return take<std::uint32_t>(); }
    std::uint64_t u64() { return take<std::uint64_t>(); }
    float f32() { return take<float>(); }
    std::vector<float> floats(std::size_t n) {
        need(n * sizeof(float));
        std::vector<float> v(n);
        std::memcpy(v.data(), in_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
        return v;
    }
    NodeId node() {
        NodeId n;
        n.level = u8();
        n.ix = u16();
        n.iy = u16();
        n.iz = u16();
        return n;
    }
    WorkKey key() {
        WorkKey k;
        k.version = u32();
        k.timestep = u32();
        k.node = node();
        return k;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string str16() { return str(u16()); }
    std::string rest() { return str(in_.size() - pos_); }
    void done() const {
        if (pos_ != in_.size()) throw ProtocolError("trailing bytes in frame payload");
    }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw ProtocolError("truncated frame payload");
    }
    template <typename T>
    T take() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

template <typename T>
T narrow(std::size_t v, const char* what) {
    if (v > std::numeric_limits<T>::max()) throw Error(std::string("too many ") + what + " for one frame");
    return static_cast<T>(v);
}

void check_priority(float p) {
    if (!(p >= 0.0f) || !std::isfinite(p)) throw ProtocolError("priority must be a finite nonnegative number");
}

struct Encoder {
    std::vector<std::uint8_t> operator()(const Hello& m) const {
        Writer w(Type::hello);
        w.u16(m.protocol);
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const Open& m) const {
        Writer w(Type::open);
        w.str16(m.dataset);
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const DatasetInfo& m) const {
        const DatasetMeta& meta = m.meta;
        Writer w(Type::dataset_info);
        for (auto d : meta.dims) w.u32(d);
        for (std::size_t a = 0; a < 3; ++a) w.f32(static_cast<float>(meta.spacing[a]));
        for (std::size_t a = 0; a < 3; ++a) w.f32(static_cast<float>(meta.origin[a]));
        w.u16(narrow<std::uint16_t>(meta.block_size, "block samples"));
        w.u8(narrow<std::uint8_t>(meta.levels, "levels"));
        w.u32(meta.timesteps);
        w.u8(narrow<std::uint8_t>(meta.fields.size(), "fields"));
        for (const auto& f : meta.fields) w.str16(f);
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const SetSpec& m) const {
        Writer w(Type::set_spec);
        w.u32(m.version);
        w.u8(narrow<std::uint8_t>(m.subvolumes.size(), "sub-volumes"));
        for (const auto& s : m.subvolumes) {
            w.u8(s.id);
            w.u8(narrow<std::uint8_t>(s.limits.size(), "limits"));
            for (const auto& l : s.limits) {
                w.u8(l.field);
                w.f32(l.lower);
                w.f32(l.upper);
            }
        }
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const CutDeltaMsg& m) const {
        Writer w(Type::cut_delta);
        w.u32(m.version);
        w.u32(m.timestep);
        w.u16(narrow<std::uint16_t>(m.delta.added.size(), "added nodes"));
        for (const auto& p : m.delta.added) {
            w.node(p.node);
            w.f32(p.priority);
        }
        w.u16(narrow<std::uint16_t>(m.delta.removed.size(), "removed nodes"));
        for (const auto& n : m.delta.removed) w.node(n);
        w.u16(narrow<std::uint16_t>(m.delta.reprioritized.size(), "reprioritized nodes"));
        for (const auto& p : m.delta.reprioritized) {
            w.node(p.node);
            w.f32(p.priority);
        }
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const ResultMeshMsg& m) const {
        const ResultMesh& mesh = m.mesh;
        const std::size_t n = mesh.vertex_count();
        if (mesh.positions.size() != 3 * n || mesh.normals.size() != 3 * n) {
            throw Error("mesh positions and normals disagree in length");
        }
        Writer w(Type::result_mesh);
        w.key(m.key());
        w.u8(mesh.subvolume_id);
        w.u32(narrow<std::uint32_t>(n, "vertices"));
        w.floats(mesh.positions);
        w.floats(mesh.normals);
        w.u8(narrow<std::uint8_t>(mesh.attributes.size(), "attribute fields"));
        for (const auto& a : mesh.attributes) {
            if (a.size() != n) throw Error("mesh attribute length differs from the vertex count");
            w.floats(a);
        }
        w.u8(mesh.velocities ? 1 : 0);
        if (mesh.velocities) {
            if (mesh.velocities->size() != 3 * n) throw Error("mesh velocity length differs from the vertex count");
            w.floats(*mesh.velocities);
        }
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const NodeDone& m) const {
        Writer w(Type::node_done);
        w.key(m.key);
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const AbortAck& m) const {
        Writer w(Type::abort_ack);
        w.u32(m.version);
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const Stats& m) const {
        Writer w(Type::stats);
        w.u32(m.pending);
        w.u32(m.running);
        w.u64(m.cache_hits);
        w.u64(m.cache_misses);
        return w.finish();
    }
    std::vector<std::uint8_t> operator()(const ErrorMsg& m) const {
        Writer w(Type::error);
        w.u16(static_cast<std::uint16_t>(m.code));
        w.text(std::string_view(m.message).substr(0, 4096));
        return w.finish();
    }
};

PrioritizedNode read_prioritized(Reader& r) {
    PrioritizedNode p;
    p.node = r.node();
    p.priority = r.f32();
    check_priority(p.priority);
    return p;
}

}  // namespace

std::string WorkKey::to_string() const {
    return "v" + std::to_string(version) + " t" + std::to_string(timestep) + " " + node.to_string();
}

Type type_of(const Message& m) {
    constexpr Type types[] = {Type::hello,       Type::open,      Type::dataset_info, Type::set_spec,  Type::cut_delta,
                              Type::result_mesh, Type::node_done, Type::abort_ack,    Type::stats,     Type::error};
    return types[m.index()];
}

std::vector<std::uint8_t> encode(const Message& m) { return std::visit(Encoder{}, m); }

Message decode(std::uint8_t type, std::span<const std::uint8_t> payload) {
    Reader r(payload);
    Message out;
    switch (static_cast<Type>(type)) {
        case Type::hello:
            out = Hello{r.u16()};
            break;
        case Type::open:
            out = Open{r.str16()};
            break;
        case Type::dataset_info: {
            DatasetMeta meta;
            for (auto& d : meta.dims) d = r.u32();
            for (std::size_t a = 0; a < 3; ++a) meta.spacing[a] = r.f32();
            for (std::size_t a = 0; a < 3; ++a) meta.origin[a] = r.f32();
            meta.block_size = r.u16();
            meta.levels = r.u8();
            meta.timesteps = r.u32();
            const std::uint8_t count = r.u8();
            for (std::uint8_t i = 0; i < count; ++i) meta.fields.push_back(r.str16());
            try {
                meta.validate();
            } catch (const Error& e) {
                throw ProtocolError(std::string("invalid dataset info: ") + e.what());
            }
            out = DatasetInfo{std::move(meta)};
            break;
        }
        case Type::set_spec: {
            SetSpec m;
            m.version = r.u32();
            const std::uint8_t count = r.u8();
            for (std::uint8_t i = 0; i < count; ++i) {
                WireSubVolume s;
                s.id = r.u8();
                const std::uint8_t nl = r.u8();
                for (std::uint8_t k = 0; k < nl; ++k) {
                    WireLimit l;
                    l.field = r.u8();
                    l.lower = r.f32();
                    l.upper = r.f32();
                    s.limits.push_back(l);
                }
                m.subvolumes.push_back(std::move(s));
            }
            out = std::move(m);
            break;
        }
        case Type::cut_delta: {
            CutDeltaMsg m;
            m.version = r.u32();
            m.timestep = r.u32();
            const std::uint16_t na = r.u16();
            for (std::uint16_t i = 0; i < na; ++i) m.delta.added.push_back(read_prioritized(r));
            const std::uint16_t nr = r.u16();
            for (std::uint16_t i = 0; i < nr; ++i) m.delta.removed.push_back(r.node());
            const std::uint16_t np = r.u16();
            for (std::uint16_t i = 0; i < np; ++i) m.delta.reprioritized.push_back(read_prioritized(r));
            out = std::move(m);
            break;
        }
        case Type::result_mesh: {
            ResultMeshMsg m;
            const WorkKey k = r.key();
            m.mesh.spec_version = k.version;
            m.mesh.timestep = k.timestep;
            m.mesh.node = k.node;
            m.mesh.subvolume_id = r.u8();
            const std::uint32_t n = r.u32();
            if (std::size_t{n} * 6 * sizeof(float) > payload.size()) throw ProtocolError("vertex count exceeds frame");
            m.mesh.positions = r.floats(3 * std::size_t{n});
            m.mesh.normals = r.floats(3 * std::size_t{n});
            const std::uint8_t nf = r.u8();
            for (std::uint8_t f = 0; f < nf; ++f) m.mesh.attributes.push_back(r.floats(n));
            const std::uint8_t has_velocity = r.u8();
            if (has_velocity > 1) throw ProtocolError("velocity flag must be 0 or 1");
            if (has_velocity) m.mesh.velocities = r.floats(3 * std::size_t{n});
            out = std::move(m);
            break;
        }
        case Type::node_done:
            out = NodeDone{r.key()};
            break;
        case Type::abort_ack:
            out = AbortAck{r.u32()};
            break;
        case Type::stats: {
            Stats s;
            s.pending = r.u32();
            s.running = r.u32();
            s.cache_hits = r.u64();
            s.cache_misses = r.u64();
            out = s;
            break;
        }
        case Type::error: {
            ErrorMsg e;
            e.code = static_cast<ErrorCode>(r.u16());
            e.message = r.rest();
            out = std::move(e);
            break;
        }
        default:
            throw ProtocolError("unknown frame type " + std::to_string(type));
    }
    r.done();
    return out;
}

std::uint32_t payload_length(std::span<const std::uint8_t> header) {
    if (header.size() < kHeaderBytes) throw ProtocolError("truncated frame header");
    std::uint32_t len;
    std::memcpy(&len, header.data(), sizeof len);
    if (len > kMaxPayload) throw ProtocolError("frame payload of " + std::to_string(len) + " bytes is too large");
    return len;
}

Message decode_frame(std::span<const std::uint8_t> frame) {
    const std::uint32_t len = payload_length(frame);
    if (frame.size() != kHeaderBytes + len) throw ProtocolError("frame length does not match its header");
    return decode(frame[4], frame.subspan(kHeaderBytes));
}

void FrameBuffer::append(std::span<const std::uint8_t> bytes) {
    if (start_ > 0 && start_ == data_.size()) {
        data_.clear();
        start_ = 0;
    }
    data_.insert(data_.end(), bytes.begin(), bytes.end());
}

std::vector<std::uint8_t> FrameBuffer::next() {
    const std::span<const std::uint8_t> avail(data_.data() + start_, data_.size() - start_);
    if (avail.size() < kHeaderBytes) return {};
    const std::size_t total = kHeaderBytes + payload_length(avail);
    if (avail.size() < total) return {};
    std::vector<std::uint8_t> frame(avail.begin(), avail.begin() + static_cast<std::ptrdiff_t>(total));
    start_ += total;
    if (start_ > (1u << 20) && start_ * 2 > data_.size()) {
        data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(start_));
        start_ = 0;
    }
    return frame;
}

SetSpec to_wire(const SpecSet& specs, const DatasetMeta& meta) {
    SetSpec m;
    m.version = specs.version;
    for (const SubVolumeSpec& s : specs.subvolumes) {
        WireSubVolume w;
        w.id = s.id;
        for (const Limit& l : s.limits) {
            const auto idx = meta.field_index(l.field);
            if (!idx) throw Error("sub-volume " + std::to_string(s.id) + ": unknown field '" + l.field + "'");
            w.limits.push_back(WireLimit{narrow<std::uint8_t>(*idx, "fields"), l.lower, l.upper});
        }
        m.subvolumes.push_back(std::move(w));
    }
    return m;
}

SpecSet from_wire(const SetSpec& msg, const DatasetMeta& meta) {
    SpecSet specs;
    specs.version = msg.version;
    for (const WireSubVolume& w : msg.subvolumes) {
        SubVolumeSpec s;
        s.id = w.id;
        for (const WireLimit& l : w.limits) {
            if (l.field >= meta.fields.size()) {
                throw ProtocolError("sub-volume " + std::to_string(w.id) + ": field index " + std::to_string(l.field) +
                                    " out of range");
            }
            s.limits.push_back(Limit{meta.fields[l.field], l.lower, l.upper});
        }
        specs.subvolumes.push_back(std::move(s));
    }
    try {
        specs.validate(meta);
    } catch (const ProtocolError&) {
        throw;
    } catch (const Error& e) {
        throw ProtocolError(e.what());
    }
    return specs;
}

}  // namespace lodvol::proto
