"""Pattern repository (storage layer) and its bit-cost model.

Patterns are plain '0'/'1' strings.  Every operation reports what it would
cost to move over a channel: address bits for retrieval, position lists for
deltas, header plus body for compression.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .configspace import bits_for
from .errors import ConflictError, MissingMaskError, PatternNotFoundError, ShapeError

HEADER_BITS = 16
LENGTH_BITS = HEADER_BITS - 1
MAX_PATTERN_BITS = (1 << LENGTH_BITS) - 1

FULL = "full"
FRAGMENT = "fragment"


def _check_bits(bits: str, what: str = "pattern") -> str:
    if any(c not in "01" for c in bits):
        raise ShapeError(f"{what} must contain only '0' and '1'")
    return bits


@dataclass(frozen=True)
class StoredPattern:
    address: int
    bits: str
    cluster: int | None = None
    kind: str = FULL

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class AssemblyRule:
    """Recipe placing fragments at bit offsets; uncovered bits take ``default``."""

    name: str
    length: int
    placements: tuple[tuple[int, int], ...]  # (fragment address, offset)
    default: str = "0"


@dataclass(frozen=True)
class Repository:
    """Copy-on-write pattern store: every mutator returns a new repository."""

    patterns: Mapping[int, StoredPattern] = field(default_factory=dict)
    access_counts: Mapping[int, int] = field(default_factory=dict)
    assembly_rules: Mapping[str, AssemblyRule] = field(default_factory=dict)
    triggers: Mapping[str, int] = field(default_factory=dict)
    aspect: tuple[str, ...] | None = None

    def __post_init__(self):
        for name, rule in self.assembly_rules.items():
            for addr, _ in rule.placements:
                if addr not in self.patterns:
                    raise PatternNotFoundError(f"assembly rule {name!r} references missing address {addr}")
        for sig, addr in self.triggers.items():
            if addr not in self.patterns:
                raise PatternNotFoundError(f"trigger {sig!r} references missing address {addr}")

    @classmethod
    def from_patterns(cls, patterns: Iterable[str], aspect: Sequence[str] | None = None) -> "Repository":
        return cls({k: StoredPattern(k, _check_bits(b)) for k, b in enumerate(patterns)},
                   aspect=tuple(aspect) if aspect is not None else None)

    @classmethod
    def generate(cls, count: int, length: int, seed: int = 0) -> "Repository":
        """``count`` distinct pseudo-random patterns of ``length`` bits."""
        rng = np.random.default_rng(seed)
        seen, out = set(), []
        limit = 1 << length if length < 63 else None
        if limit is not None and count > limit:
            raise ShapeError(f"cannot generate {count} distinct {length}-bit patterns")
        while len(out) < count:
            bits = "".join("1" if b else "0" for b in rng.integers(0, 2, size=length))
            if bits not in seen:
                seen.add(bits)
                out.append(bits)
        return cls.from_patterns(out)

    # structure -------------------------------------------------------------

    def __len__(self):
        return len(self.patterns)

    def __contains__(self, address):
        return address in self.patterns

    @property
    def address_bits(self) -> int:
        return bits_for(len(self.patterns)) if self.patterns else 0

    @property
    def addresses(self) -> list[int]:
        return sorted(self.patterns)

    @property
    def clusters(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for a in self.addresses:
            c = self.patterns[a].cluster
            if c is not None:
                out.setdefault(c, []).append(a)
        return out

    def retrieve(self, address: int) -> StoredPattern:
        try:
            return self.patterns[address]
        except KeyError:
            raise PatternNotFoundError(f"no pattern at address {address}") from None

    def find(self, bits: str) -> int | None:
        for a in self.addresses:
            if self.patterns[a].bits == bits:
                return a
        return None

    # copy-on-write mutators ---------------------------------------------------

    def with_pattern(self, bits: str, address: int | None = None, kind: str = FULL, cluster: int | None = None) -> "Repository":
        address = (max(self.patterns) + 1 if self.patterns else 0) if address is None else address
        patterns = dict(self.patterns)
        patterns[address] = StoredPattern(address, _check_bits(bits), cluster, kind)
        return replace(self, patterns=patterns)

    def without(self, addresses: Iterable[int]) -> "Repository":
        drop = set(addresses)
        return replace(
            self,
            patterns={a: p for a, p in self.patterns.items() if a not in drop},
            access_counts={a: c for a, c in self.access_counts.items() if a not in drop},
            triggers={s: a for s, a in self.triggers.items() if a not in drop},
            assembly_rules={
                n: r for n, r in self.assembly_rules.items() if not any(a in drop for a, _ in r.placements)
            },
        )

    def with_rule(self, rule: AssemblyRule) -> "Repository":
        rules = dict(self.assembly_rules)
        rules[rule.name] = rule
        return replace(self, assembly_rules=rules)

    def remember(self, trigger: str, bits: str) -> tuple["Repository", int]:
        """Store ``bits`` (reusing an identical pattern) and associate ``trigger`` with it."""
        _check_bits(trigger, "trigger")
        addr = self.find(bits)
        repo = self
        if addr is None:
            repo = self.with_pattern(bits)
            addr = max(repo.patterns)
        triggers = dict(repo.triggers)
        triggers[trigger] = addr
        return replace(repo, triggers=triggers), addr

    def with_access(self, addresses: Iterable[int]) -> "Repository":
        counts = dict(self.access_counts)
        for a in addresses:
            counts[a] = counts.get(a, 0) + 1
        return replace(self, access_counts=counts)

    def with_clusters(self, assignment: Mapping[int, int | None]) -> "Repository":
        patterns = {a: replace(p, cluster=assignment.get(a, p.cluster)) for a, p in self.patterns.items()}
        return replace(self, patterns=patterns)

    # ranking --------------------------------------------------------------------

    def cluster_order(self, cluster: int) -> list[int]:
        members = self.clusters.get(cluster, [])
        return sorted(members, key=lambda a: (-self.access_counts.get(a, 0), a))


def retrieve(repo: Repository, address: int) -> tuple[StoredPattern, int]:
    """Pattern at ``address`` and the r-channel cost of selecting it."""
    return repo.retrieve(address), repo.address_bits


def relative_address(repo: Repository, source: int, target: int) -> int:
    """Bits to address ``target`` from ``source``, including one mode flag bit.

    Same cluster: ceil(log2(1 + rank distance)); otherwise the absolute address.
    """
    a = repo.retrieve(source)
    b = repo.retrieve(target)
    if a.cluster is not None and a.cluster == b.cluster:
        order = repo.cluster_order(a.cluster)
        distance = abs(order.index(source) - order.index(target))
        return bits_for(1 + distance) + 1
    return repo.address_bits + 1


def mean_relative_cost(repo: Repository, log: Sequence[tuple[int, int]]) -> float:
    if not log:
        return 0.0
    return sum(relative_address(repo, a, b) for a, b in log) / len(log)


# deltas -----------------------------------------------------------------------


@dataclass(frozen=True)
class Delta:
    base_address: int
    length: int
    changed_positions: tuple[int, ...]
    changed_values: str

    @property
    def position_width(self) -> int:
        return bits_for(self.length) if self.length > 1 else 1

    @property
    def payload_bits(self) -> int:
        return len(self.changed_positions) * (self.position_width + 1)

    def __len__(self):
        return len(self.changed_positions)


def delta_encode(old: str, new: str, base_address: int = 0) -> Delta:
    if len(old) != len(new):
        raise ShapeError(f"delta needs equal lengths, got {len(old)} and {len(new)}")
    pos = tuple(k for k, (x, y) in enumerate(zip(old, new)) if x != y)
    return Delta(base_address, len(old), pos, "".join(new[k] for k in pos))


def apply_delta(delta: Delta, base: str) -> str:
    if len(base) != delta.length:
        raise ShapeError(f"delta for {delta.length} bits applied to {len(base)} bits")
    out = list(base)
    for k, v in zip(delta.changed_positions, delta.changed_values):
        out[k] = v
    return "".join(out)


# compression ------------------------------------------------------------------


def gamma_encode(n: int) -> str:
    """Elias gamma code of a positive integer."""
    if n < 1:
        raise ValueError("gamma code needs n >= 1")
    b = format(n, "b")
    return "0" * (len(b) - 1) + b


def gamma_decode(bits: str, pos: int) -> tuple[int, int]:
    z = 0
    while bits[pos + z] == "0":
        z += 1
    end = pos + 2 * z + 1
    return int(bits[pos + z : end], 2), end


def runs(bits: str) -> list[int]:
    out, k = [], 0
    while k < len(bits):
        j = k
        while j < len(bits) and bits[j] == bits[k]:
            j += 1
        out.append(j - k)
        k = j
    return out


def rle_encode(bits: str) -> str:
    """First bit value followed by gamma-coded maximal run lengths."""
    if not bits:
        return ""
    return bits[0] + "".join(gamma_encode(r) for r in runs(bits))


def rle_decode(code: str, length: int, pos: int = 0) -> tuple[str, int]:
    if length == 0:
        return "", pos
    value = code[pos]
    pos += 1
    parts, total = [], 0
    while total < length:
        n, pos = gamma_decode(code, pos)
        parts.append(value * n)
        total += n
        value = "1" if value == "0" else "0"
    if total != length:
        raise ShapeError("run lengths overrun the declared length")
    return "".join(parts), pos


LOSSLESS = "lossless"
REPAIRABLE = "repairable"
METHOD_RLE = "0"
METHOD_RAW = "1"


@dataclass(frozen=True)
class Compressed:
    bits: str
    mode: str
    length: int
    mask_overhead: int = 0

    def __len__(self):
        return len(self.bits)


def _header(method: str, length: int) -> str:
    if length > MAX_PATTERN_BITS:
        raise ShapeError(f"pattern of {length} bits exceeds codec limit {MAX_PATTERN_BITS}")
    return method + format(length, f"0{LENGTH_BITS}b")


def compress(pattern: str, mode: str = LOSSLESS, mask: str | None = None) -> Compressed:
    """Run-length codec with a 16-bit header (method bit + 15-bit length).

    Lossless output never exceeds len(pattern) + 16: the raw method is used
    when runs do not pay.  Repairable mode drops the bits flagged in ``mask``
    (positions the plant's corrective field restores) and stores the mask
    run-length coded, followed by the kept bits verbatim.
    """
    _check_bits(pattern)
    if mode == LOSSLESS:
        body = rle_encode(pattern)
        if len(body) < len(pattern):
            return Compressed(_header(METHOD_RLE, len(pattern)) + body, mode, len(pattern))
        return Compressed(_header(METHOD_RAW, len(pattern)) + pattern, mode, len(pattern))
    if mode == REPAIRABLE:
        if mask is None:
            raise MissingMaskError("repairable compression needs a corrective-field coverage mask")
        _check_bits(mask, "mask")
        if len(mask) != len(pattern):
            raise ShapeError("mask length differs from pattern length")
        mask_code = rle_encode(mask)
        kept = "".join(b for b, m in zip(pattern, mask) if m == "0")
        return Compressed(_header(METHOD_RAW, len(pattern)) + mask_code + kept, mode, len(pattern), len(mask_code))
    raise ValueError(f"unknown compression mode {mode!r}")


def decompress(comp: Compressed, default: str = "0") -> str:
    bits = comp.bits
    method, length = bits[0], int(bits[1:HEADER_BITS], 2)
    if comp.mode == LOSSLESS:
        if method == METHOD_RAW:
            return bits[HEADER_BITS : HEADER_BITS + length]
        return rle_decode(bits, length, HEADER_BITS)[0]
    mask, pos = rle_decode(bits, length, HEADER_BITS)
    kept = iter(bits[pos:])
    return "".join(default if m == "1" else next(kept) for m in mask)


# assembly -------------------------------------------------------------------


def assemble(repo: Repository, rule: AssemblyRule | str) -> str:
    """Overlay fragments at their offsets; uncovered bits take the rule default."""
    if isinstance(rule, str):
        try:
            rule = repo.assembly_rules[rule]
        except KeyError:
            raise PatternNotFoundError(f"no assembly rule {rule!r}") from None
    spans = []
    for addr, offset in rule.placements:
        frag = repo.retrieve(addr).bits
        if offset < 0 or offset + len(frag) > rule.length:
            raise ShapeError(f"fragment {addr} at offset {offset} exceeds length {rule.length}")
        spans.append((offset, offset + len(frag), addr, frag))
    spans.sort()
    overlaps = [
        ((a[0], a[1]), (b[0], b[1]))
        for a, b in combinations(spans, 2)
        if a[0] < b[1] and b[0] < a[1]
    ]
    if overlaps:
        raise ConflictError(f"overlapping fragments: {overlaps}", overlaps)
    out = [rule.default] * rule.length
    for lo, hi, _, frag in spans:
        out[lo:hi] = frag
    return "".join(out)


# clustering -------------------------------------------------------------------


def _co_access(log: Sequence[tuple[int, int]]) -> dict[tuple[int, int], int]:
    w: dict[tuple[int, int], int] = {}
    for a, b in log:
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        w[key] = w.get(key, 0) + 1
    return w


def agglomerate(addresses: Sequence[int], log: Sequence[tuple[int, int]]) -> list[list[int]]:
    """Greedy average-linkage merging while any pair of groups is co-accessed.

    Ties go to the pair whose smallest addresses are lowest.
    """
    w = _co_access(log)
    groups = [[a] for a in sorted(addresses)]
    while True:
        best = None
        for i, j in combinations(range(len(groups)), 2):
            total = sum(w.get((min(a, b), max(a, b)), 0) for a in groups[i] for b in groups[j])
            if total == 0:
                continue
            link = total / (len(groups[i]) * len(groups[j]))
            key = (-link, groups[i][0], groups[j][0])
            if best is None or key < best[0]:
                best = (key, i, j)
        if best is None:
            return groups
        _, i, j = best
        merged = sorted(groups[i] + groups[j])
        groups = [g for k, g in enumerate(groups) if k not in (i, j)] + [merged]
        groups.sort(key=lambda g: g[0])


def recluster(repo: Repository, co_access_log: Sequence[tuple[int, int]]) -> Repository:
    """Group co-accessed patterns so relative addressing gets cheaper.

    The new grouping is kept only when the mean relative cost over the log
    does not increase; access counts are updated either way.
    """
    if not co_access_log:
        return repo
    for a, b in co_access_log:
        repo.retrieve(a)
        repo.retrieve(b)
    counted = repo.with_access(x for pair in co_access_log for x in pair)
    groups = agglomerate(counted.addresses, co_access_log)
    candidate = counted.with_clusters({a: g[0] for g in groups for a in g})
    if mean_relative_cost(candidate, co_access_log) <= mean_relative_cost(counted, co_access_log):
        return candidate
    return counted
