#pragma once

#include "stacksim/types.hpp"

#include <cstdint>
#include <optional>

namespace stacksim {

// Header layout on the physical wire:
//   Ethernet(14) + outer IPv4(20) + UDP(8) + GRE-with-key(8) + inner IPv4(20) + TCP(20)
inline constexpr std::uint32_t kEthernetHeaderBytes = 14;
inline constexpr std::uint32_t kIpv4HeaderBytes = 20;
inline constexpr std::uint32_t kUdpHeaderBytes = 8;
inline constexpr std::uint32_t kGreKeyHeaderBytes = 8;
inline constexpr std::uint32_t kTcpHeaderBytes = 20;
inline constexpr std::uint32_t kHeaderOverheadBytes =
    kEthernetHeaderBytes + kIpv4HeaderBytes + kUdpHeaderBytes + kGreKeyHeaderBytes +
    kIpv4HeaderBytes + kTcpHeaderBytes;

enum TcpFlag : std::uint8_t {
    kFlagSyn = 1u << 0,
    kFlagAck = 1u << 1,
    kFlagFin = 1u << 2,
    kFlagRst = 1u << 3,
    kFlagPsh = 1u << 4,
};

using TcpFlags = std::uint8_t;

// Identifies a connection from the local (receiving) side's perspective.
// The tunnel id participates in equality: identical 4-tuples on different
// virtual networks are distinct flows.
struct FlowKey {
    std::uint32_t guest_local_ip = 0;
    std::uint16_t guest_local_port = 0;
    std::uint32_t remote_ip = 0;
    std::uint16_t remote_port = 0;
    std::uint32_t tunnel_id = 0;

    bool operator==(const FlowKey&) const = default;
};

struct FlowKeyHash {
    std::size_t operator()(const FlowKey& k) const noexcept {
        std::uint64_t h = 1469598103934665603ULL;
        h = fnv1a64_u64(h, (static_cast<std::uint64_t>(k.guest_local_ip) << 32) | k.remote_ip);
        h = fnv1a64_u64(h, (static_cast<std::uint64_t>(k.guest_local_port) << 48) |
                               (static_cast<std::uint64_t>(k.remote_port) << 32) | k.tunnel_id);
        return static_cast<std::size_t>(h);
    }
};

enum class WireProto : std::uint8_t {
    TcpOverGre,
    Other, // legacy traffic; the fast-path punts it
};

// Simulated wire packet. Structured record rather than a byte buffer: no
// real NIC is driven, so only the fields the data path reads are modeled.
struct Packet {
    std::uint64_t outer_src_mac = 0;
    std::uint64_t outer_dst_mac = 0;
    std::uint32_t outer_src_ip = 0;
    std::uint32_t outer_dst_ip = 0;
    std::uint16_t outer_src_port = 0;
    std::uint16_t outer_dst_port = 0;
    std::uint32_t gre_key = 0;
    std::uint32_t inner_src_ip = 0;
    std::uint32_t inner_dst_ip = 0;
    std::uint16_t inner_src_port = 0;
    std::uint16_t inner_dst_port = 0;
    std::uint32_t seq = 0;
    std::uint32_t ack = 0;
    TcpFlags flags = 0;
    WireProto proto = WireProto::TcpOverGre;
    std::uint32_t payload_len = 0;
    std::uint32_t wire_len = kHeaderOverheadBytes;
};

// The rarely-changing header fields precomputed at connection setup and kept
// in the consolidated flow state. Immutable on the fast-path.
struct HeaderTemplate {
    std::uint64_t outer_src_mac = 0;
    std::uint64_t outer_dst_mac = 0;
    std::uint32_t outer_src_ip = 0;
    std::uint32_t outer_dst_ip = 0;
    std::uint16_t outer_src_port = 0;
    std::uint16_t outer_dst_port = 0;
    std::uint32_t gre_key = 0;
    std::uint32_t inner_src_ip = 0;
    std::uint32_t inner_dst_ip = 0;
    std::uint16_t inner_src_port = 0;
    std::uint16_t inner_dst_port = 0;

    bool operator==(const HeaderTemplate&) const = default;
};

// Builds the full packet from the template in one shot; consults no other
// state.
inline Packet assemble_packet(const HeaderTemplate& t, std::uint32_t seq, std::uint32_t ack,
                              TcpFlags flags, std::uint32_t payload_len) {
    Packet p;
    p.outer_src_mac = t.outer_src_mac;
    p.outer_dst_mac = t.outer_dst_mac;
    p.outer_src_ip = t.outer_src_ip;
    p.outer_dst_ip = t.outer_dst_ip;
    p.outer_src_port = t.outer_src_port;
    p.outer_dst_port = t.outer_dst_port;
    p.gre_key = t.gre_key;
    p.inner_src_ip = t.inner_src_ip;
    p.inner_dst_ip = t.inner_dst_ip;
    p.inner_src_port = t.inner_src_port;
    p.inner_dst_port = t.inner_dst_port;
    p.seq = seq;
    p.ack = ack;
    p.flags = flags;
    p.proto = WireProto::TcpOverGre;
    p.payload_len = payload_len;
    p.wire_len = kHeaderOverheadBytes + payload_len;
    return p;
}

struct ParsedPacket {
    FlowKey key;
    std::uint32_t seq = 0;
    std::uint32_t ack = 0;
    TcpFlags flags = 0;
    std::uint32_t payload_len = 0;
};

// Parses against the expected TCP-over-GRE format. The key is built from the
// receiver's perspective: inner destination becomes the local endpoint.
// nullopt means the packet must take the slow-path legacy route.
inline std::optional<ParsedPacket> parse_packet(const Packet& p) {
    if (p.proto != WireProto::TcpOverGre) {
        return std::nullopt;
    }
    ParsedPacket r;
    r.key.guest_local_ip = p.inner_dst_ip;
    r.key.guest_local_port = p.inner_dst_port;
    r.key.remote_ip = p.inner_src_ip;
    r.key.remote_port = p.inner_src_port;
    r.key.tunnel_id = p.gre_key;
    r.seq = p.seq;
    r.ack = p.ack;
    r.flags = p.flags;
    r.payload_len = p.payload_len;
    return r;
}

// Reformats a received packet into a response acknowledgement by swapping
// every address pair and rewriting the transport fields.
inline Packet make_ack(const Packet& in, std::uint32_t seq, std::uint32_t ack) {
    Packet p;
    p.outer_src_mac = in.outer_dst_mac;
    p.outer_dst_mac = in.outer_src_mac;
    p.outer_src_ip = in.outer_dst_ip;
    p.outer_dst_ip = in.outer_src_ip;
    p.outer_src_port = in.outer_dst_port;
    p.outer_dst_port = in.outer_src_port;
    p.gre_key = in.gre_key;
    p.inner_src_ip = in.inner_dst_ip;
    p.inner_dst_ip = in.inner_src_ip;
    p.inner_src_port = in.inner_dst_port;
    p.inner_dst_port = in.inner_src_port;
    p.seq = seq;
    p.ack = ack;
    p.flags = kFlagAck;
    p.proto = WireProto::TcpOverGre;
    p.payload_len = 0;
    p.wire_len = kHeaderOverheadBytes;
    return p;
}

// Template for the reverse direction of a packet's connection: used by the
// slow path to install server-side state from an incoming SYN.
inline HeaderTemplate template_from_swapped(const Packet& in) {
    HeaderTemplate t;
    t.outer_src_mac = in.outer_dst_mac;
    t.outer_dst_mac = in.outer_src_mac;
    t.outer_src_ip = in.outer_dst_ip;
    t.outer_dst_ip = in.outer_src_ip;
    t.outer_src_port = in.outer_dst_port;
    t.outer_dst_port = in.outer_src_port;
    t.gre_key = in.gre_key;
    t.inner_src_ip = in.inner_dst_ip;
    t.inner_dst_ip = in.inner_src_ip;
    t.inner_src_port = in.inner_dst_port;
    t.inner_dst_port = in.inner_src_port;
    return t;
}

// FlowKey of the connection a locally-built template belongs to (local view).
inline FlowKey key_from_template(const HeaderTemplate& t) {
    FlowKey k;
    k.guest_local_ip = t.inner_src_ip;
    k.guest_local_port = t.inner_src_port;
    k.remote_ip = t.inner_dst_ip;
    k.remote_port = t.inner_dst_port;
    k.tunnel_id = t.gre_key;
    return k;
}

} // namespace stacksim
