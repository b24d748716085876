"""Binary stream framing for 24-bit sample transport.

Frame layout (see protocol.md for the byte-exact contract):

    offset  size  field
    0       2     magic 0x45 0x58 ("EX")
    2       1     version (currently 1)
    3       1     flags: bit0 drl_enabled, bit1 ble transport, rest 0
    4       2     seq, unsigned little-endian, wraps at 2^16
    6       4     timestamp_us of first sample, unsigned little-endian,
                  wraps at 2^32 (~71.6 min)
    10      1     channel_mask: bit i set -> AIN(i+1) present (7 channels max)
    11      1     sample_count per channel (1..255)
    12      3*N*C payload: sample_count ticks, channel-major within a tick,
                  each sample a signed 24-bit little-endian integer
    end     2     CRC-16/CCITT-FALSE over all preceding bytes, big-endian
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAGIC = b"\x45\x58"
VERSION = 1
FLAG_DRL = 0x01
FLAG_BLE = 0x02
FLAGS_RESERVED = 0xFC

HEADER_LEN = 12
CRC_LEN = 2
SAMPLE_MIN = -(2**23)
SAMPLE_MAX = 2**23 - 1
MAX_SAMPLE_COUNT = 255

TRANSPORT_SPS_LIMIT = {"serial": 19200.0, "ble": 500.0}
TRANSPORT_MTU = {"serial": 1024, "ble": 244}
MAX_FRAME_PERIOD_S = 0.05


class FrameEncodeError(ValueError):
    """Frame violates an invariant and cannot be serialized."""


class FrameDecodeError(ValueError):
    """Byte sequence is not a valid frame."""


class BadMagicError(FrameDecodeError):
    pass


class UnsupportedVersionError(FrameDecodeError):
    pass


class LengthMismatchError(FrameDecodeError):
    pass


class CrcMismatchError(FrameDecodeError):
    pass


class TransportLimitError(ValueError):
    """Requested rate exceeds what the transport can carry."""


def _crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _crc_table()


def crc16(data: bytes, crc: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection.

    crc16(b"123456789") == 0x29B1.
    """
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ b]
    return crc


@dataclass
class Frame:
    """One wire packet of 24-bit samples.

    samples has shape (sample_count, n_channels), tick-major, matching the
    payload order; n_channels must equal popcount(channel_mask).
    """

    seq: int
    timestamp_us: int
    channel_mask: int
    samples: np.ndarray
    flags: int = 0
    version: int = VERSION

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.int32))

    @property
    def sample_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def drl_enabled(self) -> bool:
        return bool(self.flags & FLAG_DRL)

    @property
    def wire_length(self) -> int:
        return HEADER_LEN + 3 * self.sample_count * self.n_channels + CRC_LEN

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.seq == other.seq
            and self.timestamp_us == other.timestamp_us
            and self.channel_mask == other.channel_mask
            and self.flags == other.flags
            and self.version == other.version
            and np.array_equal(self.samples, other.samples)
        )


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame to its exact wire layout."""
    mask = frame.channel_mask
    if not 0 < mask <= 0x7F:
        raise FrameEncodeError(f"channel_mask {mask:#x} must use bits 0..6 and be non-zero")
    if frame.flags & FLAGS_RESERVED:
        raise FrameEncodeError(f"reserved flag bits set in {frame.flags:#x}")
    if not 0 <= frame.version <= 255:
        raise FrameEncodeError(f"version {frame.version} out of byte range")
    n_ch = bin(mask).count("1")
    if frame.n_channels != n_ch:
        raise FrameEncodeError(
            f"samples carry {frame.n_channels} channels but mask has {n_ch} bits set"
        )
    if not 1 <= frame.sample_count <= MAX_SAMPLE_COUNT:
        raise FrameEncodeError(f"sample_count {frame.sample_count} outside 1..{MAX_SAMPLE_COUNT}")
    flat = frame.samples.reshape(-1)
    if flat.size and (flat.min() < SAMPLE_MIN or flat.max() > SAMPLE_MAX):
        raise FrameEncodeError("sample outside signed 24-bit range")

    header = bytearray()
    header += MAGIC
    header.append(frame.version)
    header.append(frame.flags)
    header += int(frame.seq & 0xFFFF).to_bytes(2, "little")
    header += int(frame.timestamp_us & 0xFFFFFFFF).to_bytes(4, "little")
    header.append(mask)
    header.append(frame.sample_count)
    # low 3 bytes of each little-endian int32 are the 24-bit two's complement
    payload = np.ascontiguousarray(flat, dtype="<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    body = bytes(header) + payload
    return body + crc16(body).to_bytes(2, "big")


def decode_frame(data: bytes) -> Frame:
    """Parse and validate a frame; raises a typed error naming the first
    violated check (magic, version, length consistency, then CRC)."""
    if len(data) < 2:
        raise LengthMismatchError(f"{len(data)} bytes is too short for a frame")
    if data[:2] != MAGIC:
        raise BadMagicError(f"bad magic {data[:2].hex()}")
    if data[2] != VERSION:
        raise UnsupportedVersionError(f"unsupported version {data[2]}")
    if len(data) < HEADER_LEN + CRC_LEN:
        raise LengthMismatchError(f"truncated header: {len(data)} bytes")
    mask = data[10]
    sample_count = data[11]
    n_ch = bin(mask & 0x7F).count("1")
    if mask == 0 or mask > 0x7F or sample_count == 0:
        raise LengthMismatchError(
            f"header inconsistent with any valid frame (mask={mask:#x}, count={sample_count})"
        )
    expected = HEADER_LEN + 3 * sample_count * n_ch + CRC_LEN
    if len(data) != expected:
        raise LengthMismatchError(f"expected {expected} bytes, got {len(data)}")
    stored = int.from_bytes(data[-2:], "big")
    computed = crc16(data[:-2])
    if stored != computed:
        raise CrcMismatchError(f"crc {stored:#06x} != computed {computed:#06x}")

    raw = np.frombuffer(data, dtype=np.uint8, count=3 * sample_count * n_ch, offset=HEADER_LEN)
    triples = raw.reshape(-1, 3).astype(np.int32)
    codes = triples[:, 0] | (triples[:, 1] << 8) | (triples[:, 2] << 16)
    codes = (codes ^ 0x800000) - 0x800000  # sign-extend 24 -> 32 bit
    return Frame(
        seq=int.from_bytes(data[4:6], "little"),
        timestamp_us=int.from_bytes(data[6:10], "little"),
        channel_mask=mask,
        samples=codes.reshape(sample_count, n_ch),
        flags=data[3],
        version=data[2],
    )


def plan_packetization(sps: float, n_channels: int, transport: str) -> int:
    """Largest per-frame sample_count that fits the transport MTU, keeps the
    frame period at or under 50 ms, and fits the one-byte count field."""
    if transport not in TRANSPORT_SPS_LIMIT:
        raise ValueError(f"unknown transport {transport!r}")
    if not 1 <= n_channels <= 7:
        raise ValueError(f"n_channels must be 1..7, got {n_channels}")
    if sps <= 0:
        raise ValueError("sps must be positive")
    limit = TRANSPORT_SPS_LIMIT[transport]
    if sps > limit:
        raise TransportLimitError(f"{sps} SPS exceeds the {transport} limit of {limit:g} SPS")
    mtu_bound = (TRANSPORT_MTU[transport] - HEADER_LEN - CRC_LEN) // (3 * n_channels)
    period_bound = int(MAX_FRAME_PERIOD_S * sps)
    return max(1, min(mtu_bound, period_bound, MAX_SAMPLE_COUNT))


@dataclass
class StreamStats:
    """Integrity/loss bookkeeping for one frame stream."""

    frames_ok: int = 0
    crc_failures: int = 0
    gaps: list = field(default_factory=list)  # (expected_seq, received_seq)
    samples_lost_estimate: int = 0


class StreamTracker:
    """Feeds frames in arrival order, tracking CRC failures and sequence
    gaps with 16-bit wrap-around."""

    def __init__(self):
        self.stats = StreamStats()
        self._last_seq = None
        self._last_count = 0

    def feed(self, item) -> Frame | None:
        """Accepts encoded bytes or an already-decoded Frame. Returns the
        frame, or None if it was rejected."""
        if isinstance(item, Frame):
            frame = item
        else:
            try:
                frame = decode_frame(bytes(item))
            except FrameDecodeError:
                self.stats.crc_failures += 1
                return None
        if self._last_seq is not None:
            expected = (self._last_seq + 1) & 0xFFFF
            if frame.seq != expected:
                lost = (frame.seq - expected) & 0xFFFF
                self.stats.gaps.append((expected, frame.seq))
                self.stats.samples_lost_estimate += lost * self._last_count
        self.stats.frames_ok += 1
        self._last_seq = frame.seq
        self._last_count = frame.sample_count
        return frame


def track_stream(frames) -> StreamStats:
    """Run a sequence of frames (bytes or Frame) through a fresh tracker."""
    tracker = StreamTracker()
    for item in frames:
        tracker.feed(item)
    return tracker.stats
