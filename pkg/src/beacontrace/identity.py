"""Beacon packet preimage layout and ephemeral ID derivation.

A beacon hashes ``device_id (18) || battery (1) || timestamp (8)`` with
SHA256 and XOR-folds the 32-byte digest down to 4 bytes.  The secret
device ID is the only secret input, so it acts as the key of the hash.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

DEVICE_ID_LEN = 18
PREIMAGE_LEN = 27
DIGEST_LEN = 32
EPHEMERAL_ID_LEN = 4

DEFAULT_EPOCH_S = 900

# Battery byte maps this supercapacitor voltage range linearly onto 0..255.
BATTERY_V_MIN = 1.8
BATTERY_V_MAX = 5.5


class IdentityError(ValueError):
    """Malformed identity input (wrong length, bad hex, out-of-range field)."""


@dataclass(frozen=True)
class PacketPreimage:
    device_id: bytes
    battery: int
    timestamp: int

    def to_bytes(self) -> bytes:
        return self.device_id + bytes([self.battery]) + struct.pack(">Q", self.timestamp)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PacketPreimage":
        if len(raw) != PREIMAGE_LEN:
            raise IdentityError(f"preimage must be {PREIMAGE_LEN} bytes, got {len(raw)}")
        (ts,) = struct.unpack(">Q", raw[19:])
        return cls(bytes(raw[:18]), raw[18], ts)


@dataclass(frozen=True)
class BeaconConfig:
    device_id: bytes
    mac: bytes
    adv_interval_ms: float = 100.0
    tx_dbm: int = -8
    epoch_s: int = DEFAULT_EPOCH_S

    def __post_init__(self):
        _check_device_id(self.device_id)
        if len(self.mac) != 6:
            raise IdentityError(f"MAC must be 6 bytes, got {len(self.mac)}")
        if self.epoch_s <= 0:
            raise IdentityError("epoch_s must be positive")


def _check_device_id(device_id: bytes) -> None:
    if len(device_id) != DEVICE_ID_LEN:
        raise IdentityError(f"device ID must be {DEVICE_ID_LEN} bytes, got {len(device_id)}")


def battery_byte(supercap_v: float) -> int:
    """Quantize a supercapacitor voltage to one byte (monotone, clamped)."""
    frac = (supercap_v - BATTERY_V_MIN) / (BATTERY_V_MAX - BATTERY_V_MIN)
    frac = min(max(frac, 0.0), 1.0)
    return int(round(255 * frac))


def quantize_timestamp(timestamp_s: int, epoch_s: int) -> int:
    if epoch_s <= 0:
        raise IdentityError("epoch_s must be positive")
    return (int(timestamp_s) // int(epoch_s)) * int(epoch_s)


def encode_preimage(device_id: bytes, battery: int, timestamp_s: int,
                    epoch_s: int = DEFAULT_EPOCH_S) -> PacketPreimage:
    _check_device_id(device_id)
    if not 0 <= battery <= 255:
        raise IdentityError(f"battery byte out of range: {battery}")
    if timestamp_s < 0:
        raise IdentityError("timestamp must be unsigned")
    return PacketPreimage(bytes(device_id), int(battery), quantize_timestamp(timestamp_s, epoch_s))


def fold_hash(digest: bytes) -> bytes:
    """XOR-fold a 32-byte digest in halves until 4 bytes remain."""
    if len(digest) != DIGEST_LEN:
        raise IdentityError(f"digest must be {DIGEST_LEN} bytes, got {len(digest)}")
    value = int.from_bytes(digest, "big")
    width = DIGEST_LEN * 8
    while width > EPHEMERAL_ID_LEN * 8:
        width //= 2
        value = (value >> width) ^ (value & ((1 << width) - 1))
    return value.to_bytes(EPHEMERAL_ID_LEN, "big")


def ephemeral_id(preimage: PacketPreimage) -> bytes:
    return fold_hash(hashlib.sha256(preimage.to_bytes()).digest())


@dataclass(frozen=True)
class BroadcastPayload:
    mac: bytes
    ephemeral_id: bytes
    battery: int


def make_broadcast(config: BeaconConfig, clock_s: int, energy) -> BroadcastPayload | None:
    """Build the advertised payload, or ``None`` when the beacon is dead.

    ``energy`` is anything with ``alive`` and ``supercap_v`` attributes
    (normally :class:`beacontrace.energy.EnergyState`).
    """
    if not energy.alive:
        return None
    batt = battery_byte(energy.supercap_v)
    pre = encode_preimage(config.device_id, batt, clock_s, config.epoch_s)
    return BroadcastPayload(config.mac, ephemeral_id(pre), batt)


def parse_hex(text: str, length: int | None = None, what: str = "value") -> bytes:
    try:
        raw = bytes.fromhex(text.strip())
    except ValueError as exc:
        raise IdentityError(f"malformed hex for {what}: {text!r}") from exc
    if length is not None and len(raw) != length:
        raise IdentityError(f"{what} must be {length} bytes, got {len(raw)}")
    return raw


def format_vector_line(preimage: PacketPreimage) -> str:
    return f"{preimage.to_bytes().hex()},{ephemeral_id(preimage).hex()}\n"


def read_vectors(path) -> list[tuple[bytes, bytes]]:
    """Read ``hex(preimage),hex(id)`` lines."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                pre_hex, id_hex = line.split(",")
            except ValueError:
                raise IdentityError(f"{path}:{lineno}: expected two comma-separated fields")
            out.append((parse_hex(pre_hex, PREIMAGE_LEN, "preimage"),
                        parse_hex(id_hex, EPHEMERAL_ID_LEN, "ephemeral id")))
    return out
