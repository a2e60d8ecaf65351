"""Experiment configuration: strict JSON schema -> validated objects.

The schema is documented in docs/config.md.  Validation is strict: unknown
keys are rejected, and every diagnostic names the offending field by path
(e.g. "link.capacity_bps").  SAs are kept as immutable descriptions here;
build_sadb() materializes fresh stateful SecurityAssociation objects per run
so repeated runs never share sequence or replay state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .classifier import ClassifierRule, RuleTable
from .crypto import CipherAlg, MacAlg
from .errors import ConfigError, QespLabError
from .netsim import LinkConfig, TrafficSource
from .sadb import (
    FiveTuple,
    Ipv4Net,
    ProtocolVariant,
    Sadb,
    SaMode,
    SecurityAssociation,
    Selector,
)
from .wire import addr_to_int


@dataclass(frozen=True)
class SaSpec:
    """Declarative SA description; turned into a live SA by build()."""

    spi: int
    variant: ProtocolVariant
    mode: SaMode
    cipher: CipherAlg
    cipher_key: bytes
    mac: MacAlg
    mac_key: bytes
    selector: Selector
    extended_auth: bool = False
    tunnel_src: int | None = None
    tunnel_dst: int | None = None
    iv_seed: int = 0

    def build(self) -> SecurityAssociation:
        return SecurityAssociation(
            spi=self.spi, variant=self.variant, mode=self.mode,
            cipher=self.cipher, cipher_key=self.cipher_key,
            mac=self.mac, mac_key=self.mac_key, selector=self.selector,
            extended_auth=self.extended_auth,
            tunnel_src=self.tunnel_src, tunnel_dst=self.tunnel_dst,
            iv_seed=self.iv_seed)

    def with_variant(self, variant: ProtocolVariant) -> "SaSpec":
        """Same SA re-keyed to another protocol variant (for A/B runs)."""
        extended = self.extended_auth and variant is ProtocolVariant.QESP
        return replace(self, variant=variant, extended_auth=extended)


@dataclass(frozen=True)
class ExperimentConfig:
    sas: tuple[SaSpec, ...]
    rules: RuleTable
    sources: tuple[TrafficSource, ...]
    link: LinkConfig
    duration: float
    seed: int
    output: str | None = None

    def build_sadb(self) -> Sadb:
        sadb = Sadb()
        for spec in self.sas:
            sadb.add_sa(spec.build())
        return sadb

    def with_variant(self, variant: ProtocolVariant) -> "ExperimentConfig":
        return replace(self, sas=tuple(s.with_variant(variant) for s in self.sas))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


def _expect_mapping(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    return obj


def _take(obj: dict, where: str, allowed: dict[str, bool]) -> dict:
    """Enforce required/optional keys; rejects anything unknown."""
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    for key, required in allowed.items():
        if required and key not in obj:
            raise ConfigError(f"{where}.{key}: missing required field")
    return obj


def _int_field(obj: dict, where: str, key: str, lo: int | None = None,
               hi: int | None = None, default: int | None = None) -> int:
    if key not in obj:
        if default is not None:
            return default
        raise ConfigError(f"{where}.{key}: missing required field")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}.{key}: expected an integer")
    if lo is not None and value < lo or hi is not None and value > hi:
        raise ConfigError(f"{where}.{key}: {value} out of range")
    return value


def _num_field(obj: dict, where: str, key: str, default: float | None = None) -> float:
    if key not in obj:
        if default is not None:
            return default
        raise ConfigError(f"{where}.{key}: missing required field")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number")
    return float(value)


def _str_field(obj: dict, where: str, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ConfigError(f"{where}.{key}: expected a string")
    return value


def _addr(obj: dict, where: str, key: str) -> int:
    text = _str_field(obj, where, key)
    try:
        return addr_to_int(text)
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from None


def _hex_key(obj: dict, where: str, key: str) -> bytes:
    if key not in obj:
        return b""
    text = _str_field(obj, where, key)
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise ConfigError(f"{where}.{key}: invalid hex string") from None


def _enum(obj: dict, where: str, key: str, enum_cls, default=None):
    if key not in obj and default is not None:
        return default
    text = _str_field(obj, where, key)
    try:
        return enum_cls(text)
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{where}.{key}: {text!r} is not one of: {choices}") from None


def _ports(value, where: str) -> tuple[int, int] | None:
    if value is None or value == "any":
        return None
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value, value]
    if (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        lo, hi = value
        if not (0 <= lo <= hi <= 65535):
            raise ConfigError(f"{where}: port range [{lo}, {hi}] not well-ordered")
        return lo, hi
    raise ConfigError(f'{where}: expected "any", a port, or [lo, hi]')


def parse_selector(obj, where: str) -> Selector:
    obj = _expect_mapping(obj, where)
    _take(obj, where, {"src": False, "dst": False, "protocol": False,
                       "src_ports": False, "dst_ports": False})

    def net(key: str) -> Ipv4Net:
        if key not in obj:
            return Ipv4Net(0, 0)
        try:
            return Ipv4Net.parse(_str_field(obj, where, key))
        except (ValueError, QespLabError) as exc:
            raise ConfigError(f"{where}.{key}: {exc}") from None

    protocol = obj.get("protocol")
    if protocol == "any":
        protocol = None
    if protocol is not None and (isinstance(protocol, bool) or not isinstance(protocol, int)
                                 or not 0 <= protocol <= 255):
        raise ConfigError(f'{where}.protocol: expected "any" or an integer 0-255')
    return Selector(src_net=net("src"), dst_net=net("dst"), protocol=protocol,
                    src_ports=_ports(obj.get("src_ports"), f"{where}.src_ports"),
                    dst_ports=_ports(obj.get("dst_ports"), f"{where}.dst_ports"))


def parse_sa(obj, where: str) -> SaSpec:
    obj = _expect_mapping(obj, where)
    _take(obj, where, {"spi": True, "variant": True, "mode": True,
                       "cipher": True, "cipher_key_hex": False,
                       "mac": True, "mac_key_hex": False,
                       "extended_auth": False, "selector": True,
                       "tunnel": False, "iv_seed": False})
    mode = _enum(obj, where, "mode", SaMode)
    tunnel_src = tunnel_dst = None
    if "tunnel" in obj:
        tunnel = _expect_mapping(obj["tunnel"], f"{where}.tunnel")
        _take(tunnel, f"{where}.tunnel", {"src": True, "dst": True})
        tunnel_src = _addr(tunnel, f"{where}.tunnel", "src")
        tunnel_dst = _addr(tunnel, f"{where}.tunnel", "dst")
    elif mode is SaMode.TUNNEL:
        raise ConfigError(f"{where}.tunnel: missing required field")
    extended = obj.get("extended_auth", False)
    if not isinstance(extended, bool):
        raise ConfigError(f"{where}.extended_auth: expected a boolean")
    try:
        spec = SaSpec(
            spi=_int_field(obj, where, "spi", lo=1, hi=0xFFFFFFFF),
            variant=_enum(obj, where, "variant", ProtocolVariant),
            mode=mode,
            cipher=_enum(obj, where, "cipher", CipherAlg),
            cipher_key=_hex_key(obj, where, "cipher_key_hex"),
            mac=_enum(obj, where, "mac", MacAlg),
            mac_key=_hex_key(obj, where, "mac_key_hex"),
            selector=parse_selector(obj.get("selector"), f"{where}.selector"),
            extended_auth=extended,
            tunnel_src=tunnel_src, tunnel_dst=tunnel_dst,
            iv_seed=_int_field(obj, where, "iv_seed", default=0),
        )
        spec.build()  # surface key-length/mode violations at load time
        return spec
    except QespLabError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def parse_rules(obj, where: str) -> RuleTable:
    obj = _expect_mapping(obj, where)
    _take(obj, where, {"rules": False, "default_dscp": False})
    entries = obj.get("rules", [])
    if not isinstance(entries, list):
        raise ConfigError(f"{where}.rules: expected a list")
    rules = []
    for i, entry in enumerate(entries):
        entry_where = f"{where}.rules[{i}]"
        entry = _expect_mapping(entry, entry_where)
        _take(entry, entry_where, {"selector": True, "dscp": True})
        rules.append(ClassifierRule(
            selector=parse_selector(entry["selector"], f"{entry_where}.selector"),
            dscp=_int_field(entry, entry_where, "dscp", lo=0, hi=63)))
    return RuleTable(rules=tuple(rules),
                     default_dscp=_int_field(obj, where, "default_dscp", lo=0, hi=63, default=0))


def parse_source(obj, where: str) -> TrafficSource:
    obj = _expect_mapping(obj, where)
    _take(obj, where, {"flow_id": True, "src": True, "dst": True, "protocol": True,
                       "src_port": False, "dst_port": False, "rate_pps": True,
                       "payload_size": True, "start": False, "stop": False,
                       "protection": False})
    five_tuple = FiveTuple(
        src_addr=_addr(obj, where, "src"),
        dst_addr=_addr(obj, where, "dst"),
        protocol=_int_field(obj, where, "protocol", lo=0, hi=255),
        src_port=_int_field(obj, where, "src_port", lo=0, hi=65535, default=0),
        dst_port=_int_field(obj, where, "dst_port", lo=0, hi=65535, default=0))
    protection = obj.get("protection")
    if protection is not None:
        protection = _int_field(obj, where, "protection", lo=1, hi=0xFFFFFFFF)
    stop = None
    if "stop" in obj:
        stop = _num_field(obj, where, "stop")
    return TrafficSource(
        flow_id=_str_field(obj, where, "flow_id"),
        five_tuple=five_tuple,
        rate_pps=_num_field(obj, where, "rate_pps"),
        payload_size=_int_field(obj, where, "payload_size", lo=1),
        start=_num_field(obj, where, "start", default=0.0),
        stop=stop,
        protection_spi=protection)


def parse_link(obj, where: str) -> LinkConfig:
    obj = _expect_mapping(obj, where)
    _take(obj, where, {"capacity_bps": True, "queue_limit": True, "class_map": False})
    class_map = {}
    raw_map = obj.get("class_map", {})
    raw_map = _expect_mapping(raw_map, f"{where}.class_map")
    for key, value in raw_map.items():
        if not key.isdigit():
            raise ConfigError(f"{where}.class_map: key {key!r} is not a DSCP value")
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.class_map.{key}: expected an integer class index")
        class_map[int(key)] = value
    return LinkConfig(capacity_bps=_num_field(obj, where, "capacity_bps"),
                      queue_limit=_int_field(obj, where, "queue_limit", lo=1),
                      class_map=class_map)


def parse_config(obj, where: str = "config") -> ExperimentConfig:
    obj = _expect_mapping(obj, where)
    _take(obj, where, {"sas": False, "rules": False, "sources": True, "link": True,
                       "duration": True, "seed": False, "output": False})
    sas_raw = obj.get("sas", [])
    if not isinstance(sas_raw, list):
        raise ConfigError(f"{where}.sas: expected a list")
    sas = tuple(parse_sa(sa, f"{where}.sas[{i}]") for i, sa in enumerate(sas_raw))
    spis = [sa.spi for sa in sas]
    if len(set(spis)) != len(spis):
        raise ConfigError(f"{where}.sas: duplicate SPI values")
    sources_raw = obj["sources"]
    if not isinstance(sources_raw, list) or not sources_raw:
        raise ConfigError(f"{where}.sources: expected a non-empty list")
    sources = tuple(parse_source(s, f"{where}.sources[{i}]")
                    for i, s in enumerate(sources_raw))
    flow_ids = [s.flow_id for s in sources]
    if len(set(flow_ids)) != len(flow_ids):
        raise ConfigError(f"{where}.sources: duplicate flow_id values")
    duration = _num_field(obj, where, "duration")
    if duration <= 0:
        raise ConfigError(f"{where}.duration: must be > 0")
    output = None
    if "output" in obj:
        output = _str_field(obj, where, "output")
    return ExperimentConfig(
        sas=sas,
        rules=parse_rules(obj.get("rules", {}), f"{where}.rules"),
        sources=sources,
        link=parse_link(obj.get("link"), f"{where}.link"),
        duration=duration,
        seed=_int_field(obj, where, "seed", default=0),
        output=output)


def load_config(path: str) -> ExperimentConfig:
    """Load and validate an experiment config from a JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return parse_config(raw)
