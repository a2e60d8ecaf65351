"""Wire formats: IPv4 datagrams, Q-ESP packets, classic ESP packets.

All multi-byte fields are big-endian.  Encoders are deterministic; parsers
are total (any byte string yields a value or a QespLabError subclass) and
satisfy parse(encode(x)) == x for every valid x.

Q-ESP layout (IP protocol 253)::

    outer IPv4 header (20 bytes, no options)
    Q-ESP header     SPI(4) Seq(4) SrcPort(2) DstPort(2) Proto(1) Flags(1) Reserved(2)
    IV               cipher-dependent
    ciphertext       Enc(payload || pad || pad_length)
    ICV              MAC-dependent

The Q-ESP header keeps cleartext copies of the inner source port, destination
port, and transport protocol, so a multi-field classifier can read the full
five-tuple at fixed offsets without keys.  Classic ESP (IP protocol 50) hides
those fields inside the ciphertext; it is implemented here as the baseline::

    ESP header       SPI(4) Seq(4)
    IV / ciphertext  Enc(payload || pad || pad_length || next_header)
    ICV

The trailer difference is deliberate: Q-ESP needs no next-header byte because
the protocol identifier travels in its clear header.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterable

from .errors import (
    BadChecksum,
    InvalidHeader,
    Truncated,
    UnsupportedOptions,
)

IPV4_HEADER_LEN = 20
IPV4_MAX_PAYLOAD = 65535 - IPV4_HEADER_LEN
QESP_HEADER_LEN = 16
ESP_HEADER_LEN = 8

IPPROTO_TCP = 6
IPPROTO_UDP = 17
IPPROTO_ESP = 50
# RFC 3692 experimentation number; unassigned, so it cannot collide with a
# real transport protocol inside the simulator.
IPPROTO_QESP = 253

# Q-ESP flags: bit 0 selects extended (outer-header) auth coverage.
QESP_FLAG_EXTENDED_AUTH = 0x01
QESP_VALID_FLAGS = 0x01

_IPV4_STRUCT = struct.Struct(">BBHHHBBHII")
_QESP_STRUCT = struct.Struct(">IIHHBBH")


def addr_to_int(dotted: str) -> int:
    """Parse a dotted-quad IPv4 address into a 32-bit integer."""
    parts = dotted.split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted-quad IPv4 address: {dotted!r}")
    value = 0
    for part in parts:
        if not part.isdigit():
            raise ValueError(f"not a dotted-quad IPv4 address: {dotted!r}")
        octet = int(part)
        if octet > 255:
            raise ValueError(f"octet out of range in {dotted!r}")
        value = (value << 8) | octet
    return value


def int_to_addr(value: int) -> str:
    """Format a 32-bit integer as a dotted-quad IPv4 address."""
    return ".".join(str((value >> shift) & 0xFF) for shift in (24, 16, 8, 0))


@dataclass(frozen=True)
class Ipv4Header:
    """IPv4 header without options (ihl fixed at 5).

    total_length and checksum are derived on encode; the values stored here
    reflect the wire for parsed headers and are ignored by encode_ipv4().
    Numeric field ranges are enforced by struct packing at serialization
    time, keeping per-packet construction cheap.
    """

    src_addr: int
    dst_addr: int
    protocol: int
    tos_dscp: int = 0
    identification: int = 0
    flags_frag: int = 0
    ttl: int = 64
    total_length: int = 0
    checksum: int = 0
    version: int = 4
    ihl: int = 5

    def __post_init__(self) -> None:
        if self.version != 4:
            raise InvalidHeader(f"version must be 4, got {self.version}")
        if self.ihl != 5:
            raise UnsupportedOptions(f"ihl must be 5, got {self.ihl}")

    @property
    def dscp(self) -> int:
        """Differentiated Services code point (high 6 bits of the ToS byte)."""
        return self.tos_dscp >> 2

    def with_dscp(self, dscp: int) -> "Ipv4Header":
        """Header with the DSCP bits replaced, ECN bits untouched."""
        if not 0 <= dscp <= 63:
            raise InvalidHeader(f"dscp out of range: {dscp}")
        return replace(self, tos_dscp=(dscp << 2) | (self.tos_dscp & 0x03))


def ipv4_checksum(header_bytes: bytes) -> int:
    """Ones-complement sum of 16-bit words, checksum field taken as zero."""
    total = 0
    for i in range(0, len(header_bytes), 2):
        if i == 10:  # skip the checksum field itself
            continue
        total += (header_bytes[i] << 8) | header_bytes[i + 1]
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return total ^ 0xFFFF


def serialize_ipv4_header(h: Ipv4Header) -> bytes:
    """Pack the 20 header bytes exactly as stored, checksum included.

    Used for auth-coverage construction, where mutable fields are zeroed by
    the caller and the checksum must not be recomputed.
    """
    try:
        return _IPV4_STRUCT.pack(
            (h.version << 4) | h.ihl,
            h.tos_dscp,
            h.total_length,
            h.identification,
            h.flags_frag,
            h.ttl,
            h.protocol,
            h.checksum,
            h.src_addr,
            h.dst_addr,
        )
    except struct.error as exc:
        raise InvalidHeader(f"header field out of range: {exc}") from None


def encode_ipv4(h: Ipv4Header, payload: bytes) -> bytes:
    """Serialize header plus payload, recomputing total_length and checksum."""
    if len(payload) > IPV4_MAX_PAYLOAD:
        raise InvalidHeader(f"payload too long for IPv4: {len(payload)}")
    filled = replace(h, total_length=IPV4_HEADER_LEN + len(payload), checksum=0)
    raw = bytearray(serialize_ipv4_header(filled))
    struct.pack_into(">H", raw, 10, ipv4_checksum(raw))
    return bytes(raw) + payload


def parse_ipv4(b: bytes) -> tuple[Ipv4Header, bytes]:
    """Parse one IPv4 datagram; verifies length accounting and checksum."""
    if len(b) < IPV4_HEADER_LEN:
        raise Truncated(f"IPv4 header needs 20 bytes, got {len(b)}")
    (ver_ihl, tos, total_length, ident, flags_frag, ttl, proto, checksum,
     src, dst) = _IPV4_STRUCT.unpack_from(b)
    version, ihl = ver_ihl >> 4, ver_ihl & 0x0F
    if version != 4:
        raise InvalidHeader(f"version must be 4, got {version}")
    if ihl != 5:
        raise UnsupportedOptions(f"ihl must be 5, got {ihl}")
    if total_length > len(b):
        raise Truncated(f"total_length {total_length} exceeds buffer {len(b)}")
    if total_length != len(b):
        raise InvalidHeader(
            f"trailing bytes: total_length {total_length}, buffer {len(b)}")
    if ipv4_checksum(b[:IPV4_HEADER_LEN]) != checksum:
        raise BadChecksum(f"header checksum 0x{checksum:04x} does not verify")
    header = Ipv4Header(
        src_addr=src, dst_addr=dst, protocol=proto, tos_dscp=tos,
        identification=ident, flags_frag=flags_frag, ttl=ttl,
        total_length=total_length, checksum=checksum)
    return header, b[IPV4_HEADER_LEN:]


@dataclass(frozen=True)
class QespHeader:
    """Cleartext 16-byte Q-ESP header.

    src_port, dst_port, and inner_protocol are copies of the inner transport
    values (0/0 when the inner protocol carries no ports); the original
    transport segment travels intact inside the ciphertext.
    """

    spi: int
    seq: int
    src_port: int
    dst_port: int
    inner_protocol: int
    flags: int = 0
    reserved: int = 0

    def __post_init__(self) -> None:
        if self.spi == 0:
            raise InvalidHeader("spi 0 is reserved for 'no SA'")
        if self.flags & ~QESP_VALID_FLAGS:
            raise InvalidHeader(f"undefined flag bits set: 0x{self.flags:02x}")
        if self.reserved != 0:
            raise InvalidHeader(f"reserved must be 0, got {self.reserved}")

    @property
    def extended_auth(self) -> bool:
        return bool(self.flags & QESP_FLAG_EXTENDED_AUTH)


def encode_qesp_header(h: QespHeader) -> bytes:
    """Serialize the 16 header bytes: SPI, Seq, SrcPort, DstPort, Proto, Flags, Reserved."""
    try:
        return _QESP_STRUCT.pack(h.spi, h.seq, h.src_port, h.dst_port,
                                 h.inner_protocol, h.flags, h.reserved)
    except struct.error as exc:
        raise InvalidHeader(f"header field out of range: {exc}") from None


def pack_qesp_header(spi: int, seq: int, src_port: int, dst_port: int,
                     inner_protocol: int, flags: int) -> bytes:
    """Scalar fast path of encode_qesp_header for per-packet senders.

    Callers are trusted to respect the header invariants (the engine derives
    every field from validated state); parse_qesp_header re-checks them on
    the receiving side.
    """
    return _QESP_STRUCT.pack(spi, seq, src_port, dst_port, inner_protocol, flags, 0)


def parse_qesp_header(b: bytes) -> QespHeader:
    """Parse a Q-ESP header from the first 16 bytes of b."""
    if len(b) < QESP_HEADER_LEN:
        raise Truncated(f"Q-ESP header needs 16 bytes, got {len(b)}")
    spi, seq, sport, dport, proto, flags, reserved = _QESP_STRUCT.unpack_from(b)
    # dataclass validation rejects spi==0, bad flags, nonzero reserved
    return QespHeader(spi=spi, seq=seq, src_port=sport, dst_port=dport,
                      inner_protocol=proto, flags=flags, reserved=reserved)


@dataclass(frozen=True)
class QespPacket:
    """Parsed Q-ESP packet: clear header, opaque IV/ciphertext, ICV."""

    header: QespHeader
    iv: bytes
    ciphertext: bytes
    icv: bytes


def encode_qesp_packet(p: QespPacket) -> bytes:
    return encode_qesp_header(p.header) + p.iv + p.ciphertext + p.icv


def parse_qesp_packet(b: bytes, iv_len: int, icv_len: int) -> QespPacket:
    """Split a Q-ESP packet body; iv_len/icv_len come from the SA.

    The format is not self-describing: the receiver knows the cipher and MAC
    from the SA selected by the SPI.
    """
    min_len = QESP_HEADER_LEN + iv_len + icv_len + 1
    if len(b) < min_len:
        raise Truncated(f"Q-ESP packet needs >= {min_len} bytes, got {len(b)}")
    header = parse_qesp_header(b)
    iv_end = QESP_HEADER_LEN + iv_len
    ct_end = len(b) - icv_len
    return QespPacket(header=header, iv=b[QESP_HEADER_LEN:iv_end],
                      ciphertext=b[iv_end:ct_end],
                      icv=b[ct_end:] if icv_len else b"")


@dataclass(frozen=True)
class EspPacket:
    """Parsed classic ESP packet: 8-byte header, trailer inside ciphertext."""

    spi: int
    seq: int
    iv: bytes
    ciphertext: bytes
    icv: bytes


def encode_esp(p: EspPacket) -> bytes:
    try:
        return struct.pack(">II", p.spi, p.seq) + p.iv + p.ciphertext + p.icv
    except struct.error as exc:
        raise InvalidHeader(f"header field out of range: {exc}") from None


def parse_esp(b: bytes, iv_len: int, icv_len: int) -> EspPacket:
    """Split an ESP packet body; iv_len/icv_len come from the SA."""
    min_len = ESP_HEADER_LEN + iv_len + icv_len + 1
    if len(b) < min_len:
        raise Truncated(f"ESP packet needs >= {min_len} bytes, got {len(b)}")
    spi, seq = struct.unpack_from(">II", b)
    iv_end = ESP_HEADER_LEN + iv_len
    ct_end = len(b) - icv_len
    return EspPacket(spi=spi, seq=seq, iv=b[ESP_HEADER_LEN:iv_end],
                     ciphertext=b[iv_end:ct_end],
                     icv=b[ct_end:] if icv_len else b"")


# --- packet dump files -------------------------------------------------------
#
# Fixture format: a sequence of records, each a u32 big-endian length followed
# by that many raw IPv4 datagram bytes.  Golden fixtures store the stream as
# whitespace-insensitive hex in tests/fixtures/*.hex.

def write_packet_dump(f: BinaryIO, packets: Iterable[bytes]) -> None:
    for pkt in packets:
        f.write(struct.pack(">I", len(pkt)))
        f.write(pkt)


def read_packet_dump(f: BinaryIO) -> list[bytes]:
    packets = []
    while True:
        head = f.read(4)
        if not head:
            return packets
        if len(head) < 4:
            raise Truncated("dump record length field cut short")
        (length,) = struct.unpack(">I", head)
        body = f.read(length)
        if len(body) < length:
            raise Truncated(f"dump record needs {length} bytes, got {len(body)}")
        packets.append(body)


def packets_to_hex(packets: Iterable[bytes]) -> str:
    """Render a packet dump stream as line-wrapped hex."""
    buf = io.BytesIO()
    write_packet_dump(buf, packets)
    raw = buf.getvalue().hex()
    return "\n".join(raw[i:i + 64] for i in range(0, len(raw), 64)) + "\n"


def packets_from_hex(text: str) -> list[bytes]:
    """Parse a whitespace-insensitive hex packet dump stream."""
    compact = "".join(text.split())
    try:
        raw = bytes.fromhex(compact)
    except ValueError as exc:
        raise Truncated(f"invalid hex in packet dump: {exc}") from None
    return read_packet_dump(io.BytesIO(raw))
