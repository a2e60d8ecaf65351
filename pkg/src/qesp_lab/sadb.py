"""Security Association database.

An SA governs one direction of one tunnel: algorithms, keys, the outbound
sequence counter, the inbound anti-replay window, and the selector that
matches outbound traffic onto it.  The database resolves outbound packets by
first-match over selectors (insertion order) and inbound packets by SPI.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field

from .crypto import CipherAlg, IvGenerator, MacAlg
from .errors import BadKeyLength, ConfigError, DuplicateSpi, SequenceExhausted
from .wire import addr_to_int, int_to_addr

REPLAY_WINDOW = 64
SEQ_MAX = 0xFFFFFFFF
_MASK64 = (1 << 64) - 1


class ProtocolVariant(enum.Enum):
    QESP = "qesp"
    ESP = "esp"


class SaMode(enum.Enum):
    TRANSPORT = "transport"
    TUNNEL = "tunnel"


@dataclass(frozen=True)
class FiveTuple:
    """Flow identity: addresses, transport protocol, ports (0 = no port)."""

    src_addr: int
    dst_addr: int
    protocol: int
    src_port: int = 0
    dst_port: int = 0

    def __str__(self) -> str:
        return (f"{int_to_addr(self.src_addr)}:{self.src_port} -> "
                f"{int_to_addr(self.dst_addr)}:{self.dst_port} proto {self.protocol}")


@dataclass(frozen=True)
class Ipv4Net:
    """Address prefix, e.g. 10.0.0.0/8; prefix 0 matches everything."""

    addr: int
    prefix: int

    def __post_init__(self) -> None:
        if not 0 <= self.prefix <= 32:
            raise ConfigError(f"prefix out of range: {self.prefix}")

    @classmethod
    def parse(cls, text: str) -> "Ipv4Net":
        if text == "any":
            return cls(0, 0)
        addr_part, _, prefix_part = text.partition("/")
        prefix = int(prefix_part) if prefix_part else 32
        return cls(addr_to_int(addr_part), prefix)

    @property
    def mask(self) -> int:
        return 0 if self.prefix == 0 else (0xFFFFFFFF << (32 - self.prefix)) & 0xFFFFFFFF

    def contains(self, addr: int) -> bool:
        return (addr & self.mask) == (self.addr & self.mask)

    def __str__(self) -> str:
        return f"{int_to_addr(self.addr)}/{self.prefix}"


ANY_NET = Ipv4Net(0, 0)

# Inclusive port range; None means "any".
PortRange = tuple[int, int]


@dataclass(frozen=True)
class Selector:
    """Five-tuple pattern with wildcards and inclusive port ranges."""

    src_net: Ipv4Net = ANY_NET
    dst_net: Ipv4Net = ANY_NET
    protocol: int | None = None
    src_ports: PortRange | None = None
    dst_ports: PortRange | None = None

    def __post_init__(self) -> None:
        for name, ports in (("src_ports", self.src_ports), ("dst_ports", self.dst_ports)):
            if ports is not None and ports[0] > ports[1]:
                raise ConfigError(f"{name} range not well-ordered: {ports}")

    def matches(self, ft: FiveTuple) -> bool:
        if not self.src_net.contains(ft.src_addr):
            return False
        if not self.dst_net.contains(ft.dst_addr):
            return False
        if self.protocol is not None and self.protocol != ft.protocol:
            return False
        if self.src_ports is not None and not self.src_ports[0] <= ft.src_port <= self.src_ports[1]:
            return False
        if self.dst_ports is not None and not self.dst_ports[0] <= ft.dst_port <= self.dst_ports[1]:
            return False
        return True


@dataclass
class SecurityAssociation:
    """One direction of one protected flow.

    seq_next only ever increases and is never reused; replay_highest tracks
    the greatest authenticated sequence number seen inbound.  The sequence,
    replay, and IV state are serialized per SA, so distinct SAs may be
    processed concurrently.
    """

    spi: int
    variant: ProtocolVariant
    mode: SaMode
    cipher: CipherAlg
    cipher_key: bytes
    mac: MacAlg
    mac_key: bytes
    selector: Selector = Selector()
    extended_auth: bool = False
    tunnel_src: int | None = None
    tunnel_dst: int | None = None
    iv_seed: int = 0
    seq_next: int = 1
    replay_highest: int = 0
    replay_bitmap: int = 0
    _iv_gen: IvGenerator = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.spi <= 0xFFFFFFFF:
            raise ConfigError(f"spi must be a nonzero 32-bit value, got {self.spi}")
        if len(self.cipher_key) != self.cipher.key_len:
            raise BadKeyLength(
                f"{self.cipher.value} needs a {self.cipher.key_len}-byte key, "
                f"got {len(self.cipher_key)}")
        if len(self.mac_key) != self.mac.key_len:
            raise BadKeyLength(
                f"{self.mac.value} needs a {self.mac.key_len}-byte key, "
                f"got {len(self.mac_key)}")
        if self.variant is ProtocolVariant.ESP and self.extended_auth:
            raise ConfigError("extended_auth is a Q-ESP feature; ESP never covers the outer header")
        if self.mode is SaMode.TUNNEL and (self.tunnel_src is None or self.tunnel_dst is None):
            raise ConfigError(f"tunnel-mode SA 0x{self.spi:x} needs tunnel src and dst")
        self._iv_gen = IvGenerator(self.iv_seed)
        self._lock = threading.Lock()

    def next_seq(self) -> int:
        """Issue the next outbound sequence number, starting at 1.

        Raises SequenceExhausted once the counter reaches its 32-bit ceiling;
        the SA must be rekeyed, there is no silent wrap.
        """
        with self._lock:
            if self.seq_next >= SEQ_MAX:
                raise SequenceExhausted(f"SA 0x{self.spi:x} sequence space used up")
            seq = self.seq_next
            self.seq_next += 1
            return seq

    def next_iv(self) -> bytes:
        with self._lock:
            return self._iv_gen.next_iv(self.cipher.iv_len)

    def replay_check_and_update(self, seq: int) -> bool:
        """Sliding-window anti-replay decision; call only after ICV verification.

        Window covers [replay_highest - 63, replay_highest].  Above the window
        the window advances; inside it, unseen numbers are marked and accepted,
        duplicates and anything older than the window are rejected.
        """
        if seq == 0:
            return False
        with self._lock:
            if seq > self.replay_highest:
                shift = seq - self.replay_highest
                if shift >= REPLAY_WINDOW:
                    self.replay_bitmap = 1
                else:
                    self.replay_bitmap = ((self.replay_bitmap << shift) | 1) & _MASK64
                self.replay_highest = seq
                return True
            diff = self.replay_highest - seq
            if diff >= REPLAY_WINDOW:
                return False
            bit = 1 << diff
            if self.replay_bitmap & bit:
                return False
            self.replay_bitmap |= bit
            return True


class Sadb:
    """SA registry: insertion-ordered for selectors, indexed by SPI inbound."""

    def __init__(self) -> None:
        self._by_spi: dict[int, SecurityAssociation] = {}
        self._ordered: list[SecurityAssociation] = []

    def add_sa(self, sa: SecurityAssociation) -> None:
        if sa.spi in self._by_spi:
            raise DuplicateSpi(f"SPI 0x{sa.spi:x} already registered")
        self._by_spi[sa.spi] = sa
        self._ordered.append(sa)

    def lookup_by_spi(self, spi: int) -> SecurityAssociation | None:
        return self._by_spi.get(spi)

    def lookup_outbound(self, ft: FiveTuple) -> SecurityAssociation | None:
        """First SA (insertion order) whose selector matches; None = bypass."""
        for sa in self._ordered:
            if sa.selector.matches(ft):
                return sa
        return None

    def __len__(self) -> int:
        return len(self._ordered)

    def __iter__(self):
        return iter(self._ordered)
