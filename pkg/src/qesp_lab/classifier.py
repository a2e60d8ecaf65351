"""Multi-field classifier: wire packet -> DSCP class, by rule table.

The classifier models active admission control at a link ingress: it reads
whatever five-tuple fields are readable from the packet itself (no keys) and
remarks the DSCP bits accordingly.

Readability per outer protocol:

* plain TCP/UDP — ports from the transport header;
* Q-ESP (253)   — ports and inner protocol from the clear header at fixed
  offsets 28-33 of the datagram;
* ESP (50)      — ports unavailable (encrypted); protocol reported as 50 so
  rules may still match on the ESP protocol number itself;
* anything else — ports unavailable.

A rule that constrains a port can never match a packet whose ports are
unavailable, which is exactly how ESP traffic degrades to the default class.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import wire
from .errors import ConfigError, MalformedPacket, QespLabError
from .sadb import Selector
from .wire import IPPROTO_ESP, IPPROTO_QESP, IPPROTO_TCP, IPPROTO_UDP

# Clear five-tuple copies inside the Q-ESP header, relative to its start.
_QESP_PORTS_OFF = 8
_QESP_PROTO_OFF = 12


@dataclass(frozen=True)
class ExtractedFields:
    """What a keyless observer can read; None marks unavailable ports."""

    src_addr: int
    dst_addr: int
    protocol: int
    src_port: int | None
    dst_port: int | None


@dataclass(frozen=True)
class ClassifierRule:
    selector: Selector
    dscp: int

    def __post_init__(self) -> None:
        if not 0 <= self.dscp <= 63:
            raise ConfigError(f"dscp out of range: {self.dscp}")


@dataclass(frozen=True)
class RuleTable:
    """Ordered first-match rules with a default (best-effort) code point."""

    rules: tuple[ClassifierRule, ...] = ()
    default_dscp: int = 0


def extract_fields(packet: bytes) -> ExtractedFields:
    """Extract the classifiable fields from one wire datagram."""
    try:
        header, payload = wire.parse_ipv4(packet)
    except QespLabError as exc:
        raise MalformedPacket(str(exc)) from None

    protocol = header.protocol
    src_port: int | None = None
    dst_port: int | None = None

    if protocol in (IPPROTO_TCP, IPPROTO_UDP):
        if len(payload) < 4:
            raise MalformedPacket(f"transport segment too short for ports: {len(payload)}")
        src_port = int.from_bytes(payload[0:2], "big")
        dst_port = int.from_bytes(payload[2:4], "big")
    elif protocol == IPPROTO_QESP:
        if len(payload) < wire.QESP_HEADER_LEN:
            raise MalformedPacket(f"Q-ESP header truncated: {len(payload)} bytes")
        src_port = int.from_bytes(payload[_QESP_PORTS_OFF:_QESP_PORTS_OFF + 2], "big")
        dst_port = int.from_bytes(payload[_QESP_PORTS_OFF + 2:_QESP_PORTS_OFF + 4], "big")
        protocol = payload[_QESP_PROTO_OFF]
    elif protocol == IPPROTO_ESP:
        pass  # ports stay unavailable; protocol reported as 50

    return ExtractedFields(src_addr=header.src_addr, dst_addr=header.dst_addr,
                           protocol=protocol, src_port=src_port, dst_port=dst_port)


def _matches(selector: Selector, fields: ExtractedFields) -> bool:
    if not selector.src_net.contains(fields.src_addr):
        return False
    if not selector.dst_net.contains(fields.dst_addr):
        return False
    if selector.protocol is not None and selector.protocol != fields.protocol:
        return False
    for ports, value in ((selector.src_ports, fields.src_port),
                         (selector.dst_ports, fields.dst_port)):
        if ports is not None and (value is None or not ports[0] <= value <= ports[1]):
            return False
    return True


def classify(table: RuleTable, packet: bytes) -> int:
    """DSCP for one packet: first matching rule wins, else the default."""
    fields = extract_fields(packet)
    for rule in table.rules:
        if _matches(rule.selector, fields):
            return rule.dscp
    return table.default_dscp


def remark_dscp(packet: bytes, dscp: int) -> bytes:
    """Rewrite the DSCP bits (ECN untouched) and fix the header checksum."""
    try:
        header, payload = wire.parse_ipv4(packet)
    except QespLabError as exc:
        raise MalformedPacket(str(exc)) from None
    return wire.encode_ipv4(header.with_dscp(dscp), payload)


def classify_and_remark(table: RuleTable, packet: bytes) -> tuple[int, bytes]:
    """Classify, then write the chosen DSCP into the packet's ToS byte."""
    dscp = classify(table, packet)
    return dscp, remark_dscp(packet, dscp)
