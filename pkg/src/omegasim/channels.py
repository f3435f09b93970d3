"""The four links q, r, n, m: timing, prioritized servicing, errors and repair.

Rates are bits per engine tick.  Durations are whole ticks (a transfer that
needs any part of a tick occupies it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import ChannelError, ShapeError, UnrecoverableTransferError

CHANNELS = ("q", "r", "n", "m")
BLOCK_BITS = 64
CHECK_BITS = 8
CRC_POLY = 0x07
RETRY_CAP = 8
KL_EPSILON = 1e-9


def as_fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class ChannelSet:
    q: float
    r: float
    n: float
    m: float
    s: float = 0.0
    a: float = 0.0
    ber: float | Mapping[str, float] = 0.0
    duplex: bool = False

    def __post_init__(self):
        for name in CHANNELS:
            if not getattr(self, name) > 0:
                raise ValueError(f"channel {name} needs a positive rate")

    def rate(self, channel: str) -> Fraction:
        if channel not in CHANNELS:
            raise ChannelError(f"unknown channel {channel!r}")
        return as_fraction(getattr(self, channel))

    def bit_error_rate(self, channel: str) -> float:
        if channel not in CHANNELS:
            raise ChannelError(f"unknown channel {channel!r}")
        if isinstance(self.ber, Mapping):
            return float(self.ber.get(channel, 0.0))
        return float(self.ber)

    def replace(self, **kw) -> "ChannelSet":
        fields = dict(q=self.q, r=self.r, n=self.n, m=self.m, s=self.s, a=self.a, ber=self.ber, duplex=self.duplex)
        fields.update(kw)
        return ChannelSet(**fields)


@dataclass(frozen=True)
class TransferJob:
    channel: str
    payload_bits: int
    priority_segments: tuple[tuple[int, int], ...] = ()  # (bits, rank); rank 1 is most urgent
    job_id: str = ""

    def __post_init__(self):
        if self.payload_bits < 0:
            raise ValueError("payload must be non-negative")
        if self.priority_segments and sum(b for b, _ in self.priority_segments) != self.payload_bits:
            raise ShapeError("segment bits must sum to the payload")


def ticks_for(bits: int, rate) -> int:
    if bits < 0:
        raise ValueError("payload must be non-negative")
    return math.ceil(Fraction(bits) / as_fraction(rate))


def transfer_time(job: TransferJob, channels: ChannelSet) -> int:
    return ticks_for(job.payload_bits, channels.rate(job.channel))


def parallel_transfer_time(bits: int, rate, ways: int) -> int:
    """Ticks to move ``bits`` split as evenly as possible over ``ways`` equal links."""
    if ways < 1:
        raise ValueError("need at least one link")
    base, extra = divmod(bits, ways)
    return max(ticks_for(base + (1 if k < extra else 0), rate) for k in range(ways))


# prioritized servicing -----------------------------------------------------------


def priority_weight(rank: int) -> Fraction:
    """Mass per bit of a segment; strictly decreasing in rank."""
    return Fraction(1, rank)


@dataclass
class ServiceSchedule:
    per_tick_bits: list[int]
    completion: dict[tuple[str, int], int]  # (job id, segment index) -> tick finished
    curve: list[float]  # cumulative fraction of priority mass serviced after each tick

    @property
    def total_ticks(self) -> int:
        return len(self.per_tick_bits)


def prioritized_implement(
    job: TransferJob,
    channels: ChannelSet,
    arrivals: Sequence[tuple[int, TransferJob]] = (),
) -> ServiceSchedule:
    """Serve outstanding segments strictly by rank, ``rate`` bits per tick.

    Jobs arriving at tick t join the pool before tick t is served, so the
    next bits always go to the most urgent outstanding segment.
    """
    rate = channels.rate(job.channel)
    pending: list[list] = []  # [rank, order, remaining, job id, index, weight]
    order = 0

    def admit(j: TransferJob):
        nonlocal order
        segs = j.priority_segments or ((j.payload_bits, 1),)
        for k, (bits, rank) in enumerate(segs):
            pending.append([rank, order, Fraction(bits), j.job_id, k, priority_weight(rank)])
            order += 1

    admit(job)
    queue = sorted(arrivals, key=lambda x: x[0])
    total_mass = sum(Fraction(b) * priority_weight(r) for j in [job] + [j for _, j in queue]
                     for b, r in (j.priority_segments or ((j.payload_bits, 1),)))
    served_mass = Fraction(0)
    per_tick, completion, curve = [], {}, []
    tick = 0
    while any(p[2] > 0 for p in pending) or queue:
        while queue and queue[0][0] <= tick:
            admit(queue.pop(0)[1])
        tick += 1
        budget = rate
        sent = Fraction(0)
        pending.sort(key=lambda p: (p[0], p[1]))
        for p in pending:
            if budget <= 0:
                break
            if p[2] <= 0:
                continue
            take = min(budget, p[2])
            p[2] -= take
            budget -= take
            sent += take
            served_mass += take * p[5]
            if p[2] == 0:
                completion[(p[3], p[4])] = tick
        per_tick.append(int(sent))
        curve.append(float(served_mass / total_mass) if total_mass else 1.0)
    return ServiceSchedule(per_tick, completion, curve)


# errors and duplex repair --------------------------------------------------------


def _crc8_bitwise(bits: str, reg: int = 0) -> int:
    for b in bits:
        top = ((reg >> 7) & 1) ^ (b == "1")
        reg = (reg << 1) & 0xFF
        if top:
            reg ^= CRC_POLY
    return reg


_CRC_TABLE = [_crc8_bitwise(format(k, "08b")) for k in range(256)]


def crc8(bits: str) -> str:
    """CRC-8 (x^8 + x^2 + x + 1, MSB first, zero init) of a bit string."""
    whole = len(bits) - len(bits) % 8
    reg = 0
    if whole:
        for byte in int(bits[:whole], 2).to_bytes(whole // 8, "big"):
            reg = _CRC_TABLE[reg ^ byte]
    return format(_crc8_bitwise(bits[whole:], reg), "08b")


def frame(payload: str) -> list[str]:
    """Split into 64-bit blocks, each followed by its 8 check bits."""
    blocks = [payload[k : k + BLOCK_BITS] for k in range(0, len(payload), BLOCK_BITS)]
    return [b + crc8(b) for b in blocks]


def block_ok(framed: str) -> bool:
    return crc8(framed[:-CHECK_BITS]) == framed[-CHECK_BITS:]


@dataclass
class TransmissionReport:
    received: str
    payload_bits: int
    redundancy_bits: int
    rerequested_bits: int
    sent_bits: int
    rerequests: int
    repair_rounds: list[list[int]]
    detected_blocks: list[int]
    divergence_bits: int
    nack_bits: int = 0

    @property
    def exact(self) -> bool:
        return self.divergence_bits == 0

    @property
    def conserved(self) -> bool:
        return self.sent_bits == self.payload_bits + self.redundancy_bits + self.rerequested_bits


def _corrupt(framed: str, rng: np.random.Generator, ber: float, forced: Sequence[int] = ()) -> str:
    flips = set(forced)
    if ber > 0:
        flips.update(np.flatnonzero(rng.random(len(framed)) < ber).tolist())
    if not flips:
        return framed
    out = list(framed)
    for k in flips:
        out[k] = "1" if out[k] == "0" else "0"
    return "".join(out)


def transmit_with_errors(
    payload: str,
    channels: ChannelSet,
    seed: int = 0,
    channel: str = "n",
    flips: Mapping[int, Sequence[int]] | None = None,
    retry_cap: int = RETRY_CAP,
) -> TransmissionReport:
    """Send ``payload`` in checked blocks; with duplex repair, re-request bad blocks.

    ``flips`` scripts extra bit flips on the first transmission as
    {block index: positions within the 72-bit frame}.
    """
    ber = channels.bit_error_rate(channel)
    rng = np.random.default_rng(seed)
    flips = flips or {}
    clean = frame(payload)
    got = [_corrupt(f, rng, ber, flips.get(k, ())) for k, f in enumerate(clean)]
    sent = sum(len(f) for f in clean)
    redundancy = CHECK_BITS * len(clean)
    rerequested = 0
    rounds: list[list[int]] = []
    bad = [k for k, f in enumerate(got) if not block_ok(f)]
    detected = list(bad)
    index_bits = max(1, (len(clean) - 1).bit_length())
    nack = 0
    if channels.duplex:
        while bad:
            if len(rounds) >= retry_cap:
                raise UnrecoverableTransferError(
                    f"blocks {bad} still corrupt after {retry_cap} repair rounds"
                )
            rounds.append(bad)
            nack += index_bits * len(bad)
            for k in bad:
                got[k] = _corrupt(clean[k], rng, ber)
                sent += len(clean[k])
                rerequested += len(clean[k])
            bad = [k for k in bad if not block_ok(got[k])]
            detected.extend(bad)
    received = "".join(f[:-CHECK_BITS] for f in got)
    divergence = sum(x != y for x, y in zip(received, payload))
    return TransmissionReport(
        received,
        len(payload),
        redundancy,
        rerequested,
        sent,
        sum(len(r) for r in rounds),
        rounds,
        detected,
        divergence,
        nack,
    )


# monitoring ----------------------------------------------------------------------


def _as_vector(dist, support=None) -> tuple[np.ndarray, tuple | None]:
    if isinstance(dist, Mapping):
        keys = tuple(sorted(dist, key=repr)) if support is None else support
        return np.array([float(dist.get(k, 0.0)) for k in keys]), keys
    return np.asarray(dist, dtype=float), None


def measure_q(predicted, observed, epsilon: float = KL_EPSILON) -> float:
    """KL(observed || predicted) in bits after additive smoothing and renormalisation."""
    if isinstance(predicted, Mapping) != isinstance(observed, Mapping):
        raise ShapeError("distributions must both be sequences or both mappings")
    if isinstance(predicted, Mapping):
        if set(predicted) != set(observed):
            raise ShapeError("distributions have different supports")
        p, keys = _as_vector(predicted)
        o, _ = _as_vector(observed, keys)
    else:
        p, _ = _as_vector(predicted)
        o, _ = _as_vector(observed)
        if p.shape != o.shape or p.ndim != 1:
            raise ShapeError(f"support mismatch: {p.shape} vs {o.shape}")
    if len(p) == 0:
        raise ShapeError("empty support")
    if (p < 0).any() or (o < 0).any():
        raise ValueError("negative probability")
    p = (p + epsilon) / (p + epsilon).sum()
    o = (o + epsilon) / (o + epsilon).sum()
    return max(0.0, float(np.sum(o * np.log2(o / p))))


@dataclass
class QReport:
    values: list[float]
    bits: list[int]

    @property
    def total_bits(self) -> int:
        return sum(self.bits)


def qr_mask_filter(
    q_map: Sequence[float],
    mask: Sequence[bool],
    resolution_bits: int = 8,
    full_scale: float | None = None,
) -> QReport:
    """Report only the fragments the active configuration asks to be watched.

    Masked-in fragments send their divergence quantised to ``resolution_bits``
    over [0, full_scale]; the rest send nothing.
    """
    if len(q_map) != len(mask):
        raise ShapeError(f"mask has {len(mask)} entries for {len(q_map)} fragments")
    scale = full_scale if full_scale is not None else max([*q_map, 0.0]) or 1.0
    levels = (1 << resolution_bits) - 1
    values, bits = [], []
    for d, on in zip(q_map, mask):
        if not on:
            values.append(0.0)
            bits.append(0)
            continue
        k = min(levels, max(0, round(d / scale * levels)))
        values.append(k * scale / levels)
        bits.append(resolution_bits)
    return QReport(values, bits)


def surprise_rate(predicted: Sequence, observed: Sequence) -> float:
    """Mean per-tick divergence (bits/tick) of observed symbols from one-hot predictions."""
    if len(predicted) != len(observed):
        raise ShapeError("sequences differ in length")
    if not predicted:
        return 0.0
    total = 0.0
    for p, o in zip(predicted, observed):
        support = sorted({p, o}, key=repr)
        total += measure_q([1.0 if s == p else 0.0 for s in support], [1.0 if s == o else 0.0 for s in support])
    return total / len(predicted)
