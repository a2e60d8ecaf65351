"""Byte-level wire format tests: exact offsets, endianness, totality."""

from __future__ import annotations

import io
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qesp_lab import wire
from qesp_lab.errors import (
    BadChecksum,
    InvalidHeader,
    QespLabError,
    Truncated,
    UnsupportedOptions,
)


def ones_complement_checksum_oracle(datagram: bytes) -> int:
    """Independent byte-wise ones-complement oracle for the IPv4 checksum."""
    words = [int.from_bytes(datagram[i:i + 2], "big") for i in range(0, 20, 2)]
    words[5] = 0  # checksum field
    total = sum(words)
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


class TestQespHeaderFormat:
    def test_known_encoding(self):
        """SPI, Seq, ports, protocol, flags land at their fixed offsets."""
        h = wire.QespHeader(spi=0x00000101, seq=1, src_port=5060, dst_port=5060,
                            inner_protocol=17, flags=0x01)
        assert wire.encode_qesp_header(h).hex() == "000001010000000113c413c411010000"

    def test_saturated_encoding(self):
        h = wire.QespHeader(spi=0xFFFFFFFF, seq=0xFFFFFFFF, src_port=65535,
                            dst_port=65535, inner_protocol=255, flags=0x01)
        assert wire.encode_qesp_header(h).hex() == "ff" * 13 + "010000"

    def test_spi_zero_rejected(self):
        with pytest.raises(InvalidHeader):
            wire.QespHeader(spi=0, seq=1, src_port=0, dst_port=0, inner_protocol=17)

    def test_roundtrip_known(self):
        h = wire.QespHeader(spi=0x101, seq=1, src_port=5060, dst_port=5060,
                            inner_protocol=17, flags=0x01)
        assert wire.parse_qesp_header(wire.encode_qesp_header(h)) == h

    def test_truncated(self):
        with pytest.raises(Truncated):
            wire.parse_qesp_header(b"\x00" * 15)

    def test_undefined_flag_bit_rejected(self):
        raw = bytearray(wire.encode_qesp_header(
            wire.QespHeader(spi=0x101, seq=1, src_port=1, dst_port=2, inner_protocol=17)))
        raw[13] = 0x02
        with pytest.raises(InvalidHeader):
            wire.parse_qesp_header(bytes(raw))

    def test_nonzero_reserved_rejected(self):
        raw = bytearray(wire.encode_qesp_header(
            wire.QespHeader(spi=0x101, seq=1, src_port=1, dst_port=2, inner_protocol=17)))
        raw[15] = 0x01
        with pytest.raises(InvalidHeader):
            wire.parse_qesp_header(bytes(raw))

    @given(spi=st.integers(1, 0xFFFFFFFF), seq=st.integers(0, 0xFFFFFFFF),
           sport=st.integers(0, 65535), dport=st.integers(0, 65535),
           proto=st.integers(0, 255), flags=st.sampled_from([0, 1]))
    def test_roundtrip_property(self, spi, seq, sport, dport, proto, flags):
        h = wire.QespHeader(spi=spi, seq=seq, src_port=sport, dst_port=dport,
                            inner_protocol=proto, flags=flags)
        encoded = wire.encode_qesp_header(h)
        assert len(encoded) == 16
        assert wire.parse_qesp_header(encoded) == h


class TestIpv4:
    def test_minimal_datagram(self):
        h = wire.Ipv4Header(src_addr=0, dst_addr=0, protocol=0)
        encoded = wire.encode_ipv4(h, b"")
        assert len(encoded) == 20
        parsed, payload = wire.parse_ipv4(encoded)
        assert payload == b""
        assert parsed.total_length == 20

    def test_checksum_flip_detected(self):
        encoded = bytearray(wire.encode_ipv4(
            wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=17), b"x" * 8))
        encoded[10] ^= 0x04
        with pytest.raises(BadChecksum):
            wire.parse_ipv4(bytes(encoded))

    def test_checksum_against_oracle(self):
        """Known datagram: 10.0.0.1 -> 10.0.0.2, UDP, 8-byte payload."""
        h = wire.Ipv4Header(src_addr=wire.addr_to_int("10.0.0.1"),
                            dst_addr=wire.addr_to_int("10.0.0.2"), protocol=17)
        encoded = wire.encode_ipv4(h, b"\x00" * 8)
        stored = struct.unpack_from(">H", encoded, 10)[0]
        assert stored == ones_complement_checksum_oracle(encoded)
        assert stored == 0x66CF  # frozen from the oracle

    @given(st.binary(min_size=0, max_size=200),
           st.integers(0, 255), st.integers(0, 255), st.integers(0, 65535),
           st.integers(0, 0xFFFFFFFF), st.integers(0, 0xFFFFFFFF))
    def test_roundtrip_property(self, payload, tos, proto, ident, src, dst):
        h = wire.Ipv4Header(src_addr=src, dst_addr=dst, protocol=proto,
                            tos_dscp=tos, identification=ident)
        encoded = wire.encode_ipv4(h, payload)
        parsed, parsed_payload = wire.parse_ipv4(encoded)
        assert parsed_payload == payload
        assert (parsed.src_addr, parsed.dst_addr, parsed.protocol) == (src, dst, proto)
        assert (parsed.tos_dscp, parsed.identification) == (tos, ident)
        assert parsed.total_length == 20 + len(payload)
        # byte-level identity: re-encoding a parsed header is the wire bytes
        assert wire.encode_ipv4(parsed, parsed_payload) == encoded
        assert ones_complement_checksum_oracle(encoded) == parsed.checksum

    def test_options_rejected(self):
        raw = bytearray(wire.encode_ipv4(
            wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=6), b"abcd"))
        raw[0] = 0x46  # ihl = 6
        struct.pack_into(">H", raw, 10, 0)
        struct.pack_into(">H", raw, 10, wire.ipv4_checksum(bytes(raw[:20])))
        with pytest.raises(UnsupportedOptions):
            wire.parse_ipv4(bytes(raw))

    def test_wrong_version_rejected(self):
        raw = bytearray(wire.encode_ipv4(
            wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=6), b"abcd"))
        raw[0] = 0x65
        with pytest.raises(InvalidHeader):
            wire.parse_ipv4(bytes(raw))

    def test_truncated_and_trailing(self):
        encoded = wire.encode_ipv4(
            wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=6), b"abcd")
        with pytest.raises(Truncated):
            wire.parse_ipv4(encoded[:19])
        with pytest.raises(Truncated):
            wire.parse_ipv4(encoded[:21])  # total_length says 24
        with pytest.raises(InvalidHeader):
            wire.parse_ipv4(encoded + b"junk")

    def test_oversize_payload_rejected(self):
        with pytest.raises(InvalidHeader):
            wire.encode_ipv4(wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=6),
                             b"\x00" * 65516)

    def test_dscp_helpers(self):
        h = wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=6, tos_dscp=0xB9)
        assert h.dscp == 46
        remarked = h.with_dscp(0)
        assert remarked.tos_dscp == 0x01  # ECN bit preserved


class TestEspPacket:
    def test_length_arithmetic(self):
        p = wire.EspPacket(spi=0x200, seq=7, iv=bytes(16), ciphertext=bytes(32),
                           icv=bytes(12))
        assert len(wire.encode_esp(p)) == 68

    def test_roundtrip_known(self):
        p = wire.EspPacket(spi=0x200, seq=7, iv=bytes(range(16)),
                           ciphertext=bytes(range(32)), icv=bytes(range(12)))
        assert wire.parse_esp(wire.encode_esp(p), 16, 12) == p

    def test_truncated(self):
        with pytest.raises(Truncated):
            wire.parse_esp(b"\x00" * 19, iv_len=16, icv_len=12)

    @given(spi=st.integers(0, 0xFFFFFFFF), seq=st.integers(0, 0xFFFFFFFF),
           iv_len=st.sampled_from([0, 8, 16]), icv_len=st.sampled_from([0, 12]),
           ct=st.binary(min_size=1, max_size=64))
    def test_roundtrip_property(self, spi, seq, iv_len, icv_len, ct):
        p = wire.EspPacket(spi=spi, seq=seq, iv=bytes(iv_len),
                           ciphertext=ct, icv=b"\xee" * icv_len)
        assert wire.parse_esp(wire.encode_esp(p), iv_len, icv_len) == p


class TestQespPacket:
    @given(iv_len=st.sampled_from([0, 8, 16]), icv_len=st.sampled_from([0, 12]),
           ct=st.binary(min_size=1, max_size=64))
    def test_roundtrip_property(self, iv_len, icv_len, ct):
        header = wire.QespHeader(spi=0x77, seq=9, src_port=1, dst_port=2,
                                 inner_protocol=17)
        p = wire.QespPacket(header=header, iv=bytes(iv_len), ciphertext=ct,
                            icv=b"\xaa" * icv_len)
        assert wire.parse_qesp_packet(wire.encode_qesp_packet(p), iv_len, icv_len) == p

    def test_truncated(self):
        with pytest.raises(Truncated):
            wire.parse_qesp_packet(b"\x00" * 20, iv_len=16, icv_len=12)

    def test_five_tuple_at_fixed_datagram_offsets(self):
        """Ports/protocol are readable at bytes 28-33 of the datagram, no keys."""
        header = wire.QespHeader(spi=0x101, seq=1, src_port=4000, dst_port=5060,
                                 inner_protocol=17)
        body = wire.encode_qesp_packet(wire.QespPacket(
            header=header, iv=bytes(16), ciphertext=bytes(32), icv=bytes(12)))
        datagram = wire.encode_ipv4(
            wire.Ipv4Header(src_addr=1, dst_addr=2, protocol=wire.IPPROTO_QESP), body)
        assert int.from_bytes(datagram[28:30], "big") == 4000
        assert int.from_bytes(datagram[30:32], "big") == 5060
        assert datagram[32] == 17


class TestPacketDump:
    def test_roundtrip(self):
        packets = [b"", b"\x01", b"\xab" * 300]
        buf = io.BytesIO()
        wire.write_packet_dump(buf, packets)
        buf.seek(0)
        assert wire.read_packet_dump(buf) == packets

    def test_truncated_record(self):
        buf = io.BytesIO(struct.pack(">I", 10) + b"short")
        with pytest.raises(Truncated):
            wire.read_packet_dump(buf)

    def test_hex_fixtures_ignore_whitespace(self):
        packets = [b"\x00\x01", b"\xff" * 40]
        text = wire.packets_to_hex(packets)
        assert wire.packets_from_hex(text) == packets
        assert wire.packets_from_hex("  " + text.replace("\n", " \t ")) == packets


class TestParserTotality:
    """Parsers reject arbitrary input with QespLabError, never anything else."""

    @given(st.binary(min_size=0, max_size=65536))
    @settings(max_examples=300)
    def test_parsers_total(self, blob):
        for parse in (wire.parse_ipv4, wire.parse_qesp_header,
                      lambda b: wire.parse_esp(b, 16, 12),
                      lambda b: wire.parse_qesp_packet(b, 16, 12)):
            try:
                parse(blob)
            except QespLabError:
                pass

    @given(st.text(alphabet="0123456789abcdefxyz \n\t", max_size=200))
    def test_hex_loader_total(self, text):
        try:
            wire.packets_from_hex(text)
        except QespLabError:
            pass
