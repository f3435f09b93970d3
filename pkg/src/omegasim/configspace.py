"""Configuration spaces and their canonical bit encodings.

A configuration is a point in a space of ordered dimensions.  Every point has
a fixed-width bit string (plain binary per dimension, first dimension most
significant), which is what distances, hazard keys and channel payloads are
measured on.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Callable, Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    CapacityError,
    DanglingArcError,
    NoHazardError,
    RangeError,
    SpaceMismatchError,
    UnknownTokenError,
)

DEFAULT_ENUMERATION_CAP = 2**20

BOOLEAN = "boolean"
INTEGER = "integer"
REAL = "real"

_REAL_TOL = 1e-9


def bits_for(cardinality: int) -> int:
    """Bits needed to select one of ``cardinality`` items, ceil(log2(n))."""
    if cardinality < 1:
        raise ValueError("cardinality must be >= 1")
    return (cardinality - 1).bit_length()


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str = BOOLEAN
    lo: float = 0
    hi: float = 1
    levels: int = 2

    def __post_init__(self):
        if self.kind == BOOLEAN:
            object.__setattr__(self, "lo", 0)
            object.__setattr__(self, "hi", 1)
            object.__setattr__(self, "levels", 2)
        elif self.kind == INTEGER:
            if int(self.lo) != self.lo or int(self.hi) != self.hi:
                raise ValueError(f"integer dimension {self.name!r} needs integral bounds")
            object.__setattr__(self, "lo", int(self.lo))
            object.__setattr__(self, "hi", int(self.hi))
            object.__setattr__(self, "levels", int(self.hi) - int(self.lo) + 1)
        elif self.kind == REAL:
            if not self.hi > self.lo:
                raise ValueError(f"real dimension {self.name!r} needs lo < hi")
            object.__setattr__(self, "lo", float(self.lo))
            object.__setattr__(self, "hi", float(self.hi))
        else:
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if self.levels < 2:
            raise ValueError(f"dimension {self.name!r} needs cardinality >= 2")

    @classmethod
    def boolean(cls, name: str) -> "Dimension":
        return cls(name, BOOLEAN)

    @classmethod
    def integer(cls, name: str, lo: int, hi: int) -> "Dimension":
        return cls(name, INTEGER, lo, hi)

    @classmethod
    def real(cls, name: str, lo: float, hi: float, levels: int) -> "Dimension":
        return cls(name, REAL, lo, hi, levels)

    @property
    def cardinality(self) -> int:
        return self.levels

    @property
    def bit_width(self) -> int:
        return bits_for(self.levels)

    @property
    def step(self) -> float:
        if self.kind == REAL:
            return (self.hi - self.lo) / (self.levels - 1)
        return 1

    def renamed(self, name: str) -> "Dimension":
        return Dimension(name, self.kind, self.lo, self.hi, self.levels)

    def value_at(self, index: int):
        if not 0 <= index < self.levels:
            raise RangeError(self.name, index, "level index")
        if self.kind == BOOLEAN:
            return int(index)
        if self.kind == INTEGER:
            return self.lo + int(index)
        if index == self.levels - 1:
            return self.hi
        return self.lo + index * (self.hi - self.lo) / (self.levels - 1)

    def quantize(self, x: float) -> int:
        """Nearest level index for a real value; raises outside [lo, hi]."""
        x = float(x)
        if not math.isfinite(x):
            raise RangeError(self.name, x, "not finite")
        span = self.hi - self.lo
        if x < self.lo - _REAL_TOL * max(1.0, abs(span)) or x > self.hi + _REAL_TOL * max(1.0, abs(span)):
            raise RangeError(self.name, x, f"[{self.lo}, {self.hi}]")
        k = int(round((x - self.lo) / self.step)) if self.kind == REAL else int(round(x - self.lo))
        return min(max(k, 0), self.levels - 1)

    def index_of(self, value) -> int:
        if self.kind == BOOLEAN:
            if value in (0, 1) and not isinstance(value, float) or value in (True, False):
                return int(value)
            raise RangeError(self.name, value, "boolean")
        if self.kind == INTEGER:
            if isinstance(value, float) and not value.is_integer():
                raise RangeError(self.name, value, "not integral")
            try:
                v = int(value)
            except (TypeError, ValueError):
                raise RangeError(self.name, value, "not an integer") from None
            if not self.lo <= v <= self.hi:
                raise RangeError(self.name, value, f"[{self.lo}, {self.hi}]")
            return v - self.lo
        return self.quantize(value)

    def values_array(self, indices: np.ndarray) -> np.ndarray:
        if self.kind == REAL:
            return self.lo + indices * self.step
        return self.lo + indices

    def describe(self) -> str:
        if self.kind == BOOLEAN:
            return "boolean"
        if self.kind == INTEGER:
            return f"int {self.lo} {self.hi}"
        return f"real {self.lo!r} {self.hi!r} {self.levels}"


@dataclass(frozen=True)
class Constraint:
    """Inclusive interval predicate on one dimension; equality when lo == hi."""

    dim: str
    lo: float
    hi: float

    def holds(self, value) -> bool:
        return self.lo - _REAL_TOL <= value <= self.hi + _REAL_TOL


@dataclass(frozen=True)
class LegalityMap:
    """Partition of a space into legal (L) and illegal (N) points.

    Constraints combine conjunctively.  In whitelist mode only listed points
    are legal (and still must satisfy the constraints); the blacklist always
    removes points.
    """

    constraints: tuple[Constraint, ...] = ()
    blacklist: frozenset = frozenset()
    whitelist: frozenset = frozenset()
    whitelist_mode: bool = False

    @property
    def trivial(self) -> bool:
        return not self.constraints and not self.blacklist and not self.whitelist_mode

    def violations(self, space: "ConfigSpace", values: tuple) -> int:
        count = 0
        for c in self.constraints:
            if not c.holds(values[space.dim_index(c.dim)]):
                count += 1
        if values in self.blacklist:
            count += 1
        if self.whitelist_mode and values not in self.whitelist:
            count += 1
        return count

    def is_legal(self, space: "ConfigSpace", values: tuple) -> bool:
        return self.violations(space, values) == 0


@dataclass(frozen=True, eq=False)
class ConfigSpace:
    dimensions: tuple[Dimension, ...]
    legality: LegalityMap = field(default_factory=LegalityMap)
    name: str = "space"

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        seen = set()
        for d in self.dimensions:
            if d.name in seen:
                raise ValueError(f"duplicate dimension name {d.name!r}")
            seen.add(d.name)
        for c in self.legality.constraints:
            if c.dim not in seen:
                raise ValueError(f"constraint on unknown dimension {c.dim!r}")
        for group in (self.legality.blacklist, self.legality.whitelist):
            for values in group:
                self._check_values(values)

    @classmethod
    def of(cls, *dims: Dimension, legality: LegalityMap | None = None, name: str = "space") -> "ConfigSpace":
        return cls(tuple(dims), legality or LegalityMap(), name)

    @classmethod
    def booleans(cls, n: int, prefix: str = "b", legality: LegalityMap | None = None) -> "ConfigSpace":
        return cls(tuple(Dimension.boolean(f"{prefix}{k}") for k in range(n)), legality or LegalityMap())

    @classmethod
    def array(cls, prefix: str, template: Dimension, count: int, legality: LegalityMap | None = None) -> "ConfigSpace":
        return cls(tuple(template.renamed(f"{prefix}[{k}]") for k in range(count)), legality or LegalityMap())

    # structure -------------------------------------------------------------

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, ConfigSpace):
            return NotImplemented
        return self.dimensions == other.dimensions and self.legality == other.legality

    def __hash__(self):
        return self._hash

    @cached_property
    def _hash(self) -> int:
        return hash((self.dimensions, self.legality))

    def __len__(self):
        return len(self.dimensions)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    @cached_property
    def _positions(self) -> dict[str, int]:
        return {d.name: k for k, d in enumerate(self.dimensions)}

    def dim_index(self, name: str) -> int:
        try:
            return self._positions[name]
        except KeyError:
            raise KeyError(f"no dimension {name!r} in space") from None

    @cached_property
    def widths(self) -> tuple[int, ...]:
        return tuple(d.bit_width for d in self.dimensions)

    @cached_property
    def total_width(self) -> int:
        return sum(self.widths)

    @cached_property
    def shifts(self) -> tuple[int, ...]:
        out, acc = [], self.total_width
        for w in self.widths:
            acc -= w
            out.append(acc)
        return tuple(out)

    @cached_property
    def size(self) -> int:
        return math.prod(d.cardinality for d in self.dimensions)

    @cached_property
    def radix(self) -> tuple[int, ...]:
        out, acc = [], 1
        for d in reversed(self.dimensions):
            out.append(acc)
            acc *= d.cardinality
        return tuple(reversed(out))

    @cached_property
    def all_power_of_two(self) -> bool:
        return all(d.cardinality == 1 << d.bit_width for d in self.dimensions)

    def subspace(self, names: Sequence[str], name: str | None = None) -> "ConfigSpace":
        """Space over a subset of dimensions; only interval constraints carry over."""
        keep = set(names)
        dims = tuple(d for d in self.dimensions if d.name in keep)
        if len(dims) != len(keep):
            missing = keep - set(self.names)
            raise KeyError(f"unknown dimensions {sorted(missing)}")
        cons = tuple(c for c in self.legality.constraints if c.dim in keep)
        return ConfigSpace(dims, LegalityMap(constraints=cons), name or self.name)

    def with_legality(self, legality: LegalityMap) -> "ConfigSpace":
        return ConfigSpace(self.dimensions, legality, self.name)

    # points ------------------------------------------------------------------

    def _check_values(self, values) -> tuple[int, ...]:
        values = tuple(values)
        if len(values) != len(self.dimensions):
            raise SpaceMismatchError(
                f"expected {len(self.dimensions)} values, got {len(values)}"
            )
        return tuple(d.index_of(v) for d, v in zip(self.dimensions, values))

    def point(self, values: Iterable) -> "ConfigPoint":
        idx = self._check_values(values)
        return self.point_from_indices(idx)

    def point_from_indices(self, indices: Sequence[int]) -> "ConfigPoint":
        vals = tuple(d.value_at(i) for d, i in zip(self.dimensions, indices))
        p = ConfigPoint(self, vals)
        p.__dict__["indices"] = tuple(int(i) for i in indices)
        return p

    def indices_of_code(self, code: int) -> tuple[int, ...]:
        if code < 0 or code >> self.total_width:
            raise RangeError(self.name, code, "code wider than space")
        out = []
        for d, w, s in zip(self.dimensions, self.widths, self.shifts):
            i = (code >> s) & ((1 << w) - 1)
            if i >= d.cardinality:
                raise RangeError(d.name, i, "code field beyond cardinality")
            out.append(i)
        return tuple(out)

    def is_valid_code(self, code: int) -> bool:
        try:
            self.indices_of_code(code)
        except RangeError:
            return False
        return True

    def point_from_code(self, code: int) -> "ConfigPoint":
        return self.point_from_indices(self.indices_of_code(code))

    def indices_of_index(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise RangeError(self.name, index, "address")
        return tuple((index // r) % d.cardinality for r, d in zip(self.radix, self.dimensions))

    def point_from_index(self, index: int) -> "ConfigPoint":
        return self.point_from_indices(self.indices_of_index(index))

    def code_of_indices(self, indices: Sequence[int]) -> int:
        code = 0
        for i, w in zip(indices, self.widths):
            code = (code << w) | int(i)
        return code

    def index_of_indices(self, indices: Sequence[int]) -> int:
        return sum(int(i) * r for i, r in zip(indices, self.radix))

    def encode(self, point: "ConfigPoint") -> str:
        return encode(point)

    def decode(self, bits: str) -> "ConfigPoint":
        return decode(self, bits)

    def is_legal(self, point) -> bool:
        values = point.values if isinstance(point, ConfigPoint) else tuple(point)
        return self.legality.is_legal(self, values)

    def violations(self, point) -> int:
        values = point.values if isinstance(point, ConfigPoint) else tuple(point)
        return self.legality.violations(self, values)

    def zero(self) -> "ConfigPoint":
        return self.point_from_indices((0,) * len(self.dimensions))

    # enumeration ---------------------------------------------------------

    def require_enumerable(self, cap: int = DEFAULT_ENUMERATION_CAP, what: str = "analysis"):
        if self.size > cap:
            raise CapacityError(
                f"{what} needs {self.size} points, cap is {cap}; "
                "pass explicit point subsets for large spaces"
            )

    def codes(self, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
        """All valid codes in ascending order."""
        self.require_enumerable(cap, "enumeration")
        codes = np.zeros(1, dtype=np.int64)
        for d, w in zip(self.dimensions, self.widths):
            codes = ((codes[:, None] << w) | np.arange(d.cardinality, dtype=np.int64)[None, :]).ravel()
        return codes

    def iter_points(self, cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator["ConfigPoint"]:
        self.require_enumerable(cap, "enumeration")
        for k in range(self.size):
            yield self.point_from_index(k)

    def field_indices(self, codes: np.ndarray, k: int) -> np.ndarray:
        return (codes >> self.shifts[k]) & ((1 << self.widths[k]) - 1)

    def legal_mask(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        mask = np.ones(codes.shape, dtype=bool)
        leg = self.legality
        for c in leg.constraints:
            k = self.dim_index(c.dim)
            vals = self.dimensions[k].values_array(self.field_indices(codes, k))
            mask &= (vals >= c.lo - _REAL_TOL) & (vals <= c.hi + _REAL_TOL)
        if leg.whitelist_mode:
            white = np.array(sorted(self.point(v).code for v in leg.whitelist), dtype=np.int64)
            mask &= np.isin(codes, white)
        if leg.blacklist:
            black = np.array(sorted(self.point(v).code for v in leg.blacklist), dtype=np.int64)
            mask &= ~np.isin(codes, black)
        return mask


@dataclass(frozen=True, eq=False)
class ConfigPoint:
    space: ConfigSpace
    values: tuple

    def __eq__(self, other):
        if not isinstance(other, ConfigPoint):
            return NotImplemented
        return self.values == other.values and self.space == other.space

    def __hash__(self):
        return hash(self.values)

    def __repr__(self):
        if len(self.values) > 16:
            return f"ConfigPoint(<{len(self.values)} dims>, code=0x{self.code:x})"
        return f"ConfigPoint({self.values!r})"

    def __getitem__(self, name: str):
        return self.values[self.space.dim_index(name)]

    @cached_property
    def indices(self) -> tuple[int, ...]:
        return self.space._check_values(self.values)

    @cached_property
    def code(self) -> int:
        return self.space.code_of_indices(self.indices)

    @cached_property
    def index(self) -> int:
        return self.space.index_of_indices(self.indices)

    @property
    def bits(self) -> str:
        return encode(self)

    def with_values(self, updates: Mapping[str, object]) -> "ConfigPoint":
        vals = list(self.values)
        for k, v in updates.items():
            vals[self.space.dim_index(k)] = v
        return self.space.point(vals)


@dataclass(frozen=True)
class SafetyMetrics:
    """Hazard keys (bits), reliability (unitless) and safety S = h_kp * R (bits).

    ``None`` hazard keys mean "no hazard": the illegal set is empty, which is
    reported distinctly from a key of 0.
    """

    h_k: int | None
    h_kp: int | None
    R: float
    S: float | None = None

    def __post_init__(self):
        expected = None if self.h_kp is None else self.h_kp * self.R
        if self.S is None:
            object.__setattr__(self, "S", expected)
        elif expected is None or self.S != expected:
            raise ValueError("S must equal h_kp * R")

    @property
    def no_hazard(self) -> bool:
        return self.h_k is None


# encoding ---------------------------------------------------------------------


def encode(point: ConfigPoint) -> str:
    width = point.space.total_width
    if width == 0:
        return ""
    return format(point.code, f"0{width}b")


def decode(space: ConfigSpace, bits: str) -> ConfigPoint:
    if len(bits) != space.total_width:
        raise SpaceMismatchError(f"expected {space.total_width} bits, got {len(bits)}")
    if space.total_width == 0:
        return space.point(())
    return space.point_from_code(int(bits, 2))


def _same_space(a: ConfigPoint, b: ConfigPoint):
    if a.space is not b.space and a.space != b.space:
        raise SpaceMismatchError("points belong to different spaces")


def bit_distance(a: ConfigPoint, b: ConfigPoint) -> int:
    """Hamming distance between the canonical encodings of two points."""
    _same_space(a, b)
    return (a.code ^ b.code).bit_count()


def popcount(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


# hazard keys --------------------------------------------------------------------


def _codes_of(space: ConfigSpace, points) -> np.ndarray:
    out = []
    for p in points:
        if isinstance(p, ConfigPoint):
            if p.space is not space and p.space != space:
                raise SpaceMismatchError("point belongs to a different space")
            out.append(p.code)
        else:
            out.append(space.point(p).code)
    return np.array(sorted(set(out)), dtype=np.int64)


def min_cross_distance(a: np.ndarray, b: np.ndarray, width: int) -> int:
    """Minimum Hamming distance between any code in ``a`` and any in ``b``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty code set")
    if len(a) * len(b) > 2**24 and width <= 24:
        # multi-source BFS over the hypercube
        dist = np.full(1 << width, -1, dtype=np.int64)
        dist[b] = 0
        frontier = b
        level = 0
        while frontier.size:
            level += 1
            nxt = []
            for k in range(width):
                nb = frontier ^ (1 << k)
                nb = nb[dist[nb] < 0]
                dist[nb] = level
                nxt.append(nb)
            frontier = np.unique(np.concatenate(nxt)) if nxt else np.empty(0, dtype=np.int64)
        return int(dist[a].min())
    best = width + 1
    chunk = max(1, 2**22 // max(1, len(b)))
    for s in range(0, len(a), chunk):
        d = popcount(a[s : s + chunk, None] ^ b[None, :]).min()
        best = min(best, int(d))
        if best == 0:
            break
    return best


def hazard_key(
    space: ConfigSpace,
    legal=None,
    illegal=None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> int:
    """Minimum bit distance between the legal set L and the illegal set N.

    Without explicit subsets both sets come from the space's legality map,
    which requires the space to be enumerable under ``cap``.
    """
    if legal is None or illegal is None:
        if illegal is None and space.legality.trivial:
            raise NoHazardError("no illegal configurations: hazard key undefined")
        codes = space.codes(cap)
        mask = space.legal_mask(codes)
        L = codes[mask] if legal is None else _codes_of(space, legal)
        N = codes[~mask] if illegal is None else _codes_of(space, illegal)
    else:
        L = _codes_of(space, legal)
        N = _codes_of(space, illegal)
    if len(N) == 0:
        raise NoHazardError("no illegal configurations: hazard key undefined")
    if len(L) == 0:
        raise ValueError("legal set is empty")
    return min_cross_distance(L, N, space.total_width)


# bridges and barriers -----------------------------------------------------------


@dataclass
class ReachabilityReport:
    reachable: bool
    path: list[ConfigPoint]
    min_budget: int | None
    step_budget: int

    @property
    def steps(self) -> int | None:
        return len(self.path) - 1 if self.reachable else None

    def to_json(self) -> dict:
        return {
            "reachable": self.reachable,
            "path": [p.bits for p in self.path],
            "min_budget": self.min_budget,
        }


def flip_masks(width: int, budget: int) -> np.ndarray:
    """All masks with 1..budget bits set, in ascending numeric order."""
    masks = []
    for k in range(1, min(budget, width) + 1):
        for bits in combinations(range(width), k):
            m = 0
            for b in bits:
                m |= 1 << b
            masks.append(m)
    return np.array(sorted(masks), dtype=np.int64)


def mask_count(width: int, budget: int) -> int:
    return sum(comb(width, k) for k in range(1, min(budget, width) + 1))


def _member(sorted_codes: np.ndarray, cand: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(sorted_codes, cand)
    pos = np.minimum(pos, len(sorted_codes) - 1)
    return sorted_codes[pos] == cand


class _CodeGraph:
    """Implicit graph over a sorted code set; edges join codes within ``budget`` bits."""

    def __init__(self, nodes: np.ndarray, width: int, budget: int):
        self.nodes = nodes
        self.budget = budget
        self.masks = None
        if mask_count(width, budget) <= max(len(nodes), 4096):
            self.masks = flip_masks(width, budget)

    def neighbors(self, code: int) -> np.ndarray:
        if self.masks is not None:
            cand = code ^ self.masks
            cand = np.sort(cand[_member(self.nodes, cand)])
            return cand
        d = popcount(self.nodes ^ code)
        return self.nodes[(d > 0) & (d <= self.budget)]

    def shortest_path(self, start: int, goal: int) -> list[int] | None:
        if start == goal:
            return [start]
        parent = {start: None}
        queue = deque([start])
        while queue:
            c = queue.popleft()
            for n in self.neighbors(c).tolist():
                if n in parent:
                    continue
                parent[n] = c
                if n == goal:
                    path = [n]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path[::-1]
                queue.append(n)
        return None


def detect_bridges_and_barriers(
    space: ConfigSpace,
    start: ConfigPoint,
    goal: ConfigPoint,
    step_budget: int,
    node_cap: int = DEFAULT_ENUMERATION_CAP,
    nodes=None,
) -> ReachabilityReport:
    """Breadth-first search over legal points joined by moves of <= step_budget bits.

    ``nodes`` restricts the search to an explicit legal subset, which is the
    way to analyse spaces above ``node_cap``.
    """
    _same_space(start, goal)
    if not space.is_legal(start) or not space.is_legal(goal):
        raise ValueError("start and goal must be legal")
    if nodes is None:
        codes = space.codes(node_cap)
        legal = codes[space.legal_mask(codes)]
    else:
        legal = _codes_of(space, nodes)
        if len(legal) > node_cap:
            raise CapacityError(f"{len(legal)} nodes exceed cap {node_cap}")
        legal = np.union1d(legal, [start.code, goal.code])
    width = space.total_width
    path = _CodeGraph(legal, width, step_budget).shortest_path(start.code, goal.code)

    # smallest budget that connects start and goal (reachability is monotone in budget)
    if start.code == goal.code:
        min_budget = 0
    elif path is not None and step_budget <= 1:
        min_budget = step_budget
    else:
        lo, hi = 1, width
        if _CodeGraph(legal, width, hi).shortest_path(start.code, goal.code) is None:
            min_budget = None
        else:
            while lo < hi:
                mid = (lo + hi) // 2
                if _CodeGraph(legal, width, mid).shortest_path(start.code, goal.code) is None:
                    lo = mid + 1
                else:
                    hi = mid
            min_budget = lo
    points = [space.point_from_code(c) for c in path] if path is not None else []
    return ReachabilityReport(path is not None, points, min_budget, step_budget)


# representation-style encoders ----------------------------------------------------


def encode_polynomial(coefficients: Sequence[float], quantization: Dimension) -> ConfigPoint:
    """Quantize (c_n, ..., c_0) into one real dimension per coefficient.

    Every coefficient is mandatory; out-of-range values raise.
    """
    if quantization.kind != REAL:
        raise ValueError("polynomial quantization needs a real dimension template")
    n = len(coefficients) - 1
    dims = tuple(quantization.renamed(f"c{n - k}") for k in range(len(coefficients)))
    space = ConfigSpace(dims, name="polynomial")
    idx = []
    for d, c in zip(dims, coefficients):
        idx.append(d.quantize(c))
    return space.point_from_indices(idx)


def decode_polynomial(point: ConfigPoint) -> tuple[float, ...]:
    return tuple(float(v) for v in point.values)


def encode_graph(
    nodes: Sequence[int],
    arcs: Iterable[tuple[int, int, int]],
    n_types: int | None = None,
    attribute_levels: int | None = None,
) -> ConfigPoint:
    """Encode typed directed arcs as boolean relation bits plus node attributes.

    ``arcs`` holds (type, from, to) triples.  Relation dimensions are ordered by
    (type, from, to); attribute dimensions follow.
    """
    arcs = list(arcs)
    i = len(nodes)
    j = n_types if n_types is not None else max([a[0] for a in arcs], default=0) + 1
    levels = attribute_levels if attribute_levels is not None else max(2, max(nodes, default=0) + 1)
    for t, a, b in arcs:
        if not 0 <= t < j:
            raise DanglingArcError(f"arc type {t} outside 0..{j - 1}")
        if not (0 <= a < i and 0 <= b < i):
            raise DanglingArcError(f"arc {a}->{b} references a missing node (have {i})")
    dims = [
        Dimension.boolean(f"rel_{t}_{a}_{b}")
        for t in range(j)
        for a in range(i)
        for b in range(i)
    ]
    dims += [Dimension.integer(f"attr_{k}", 0, levels - 1) for k in range(i)]
    space = ConfigSpace(tuple(dims), name=f"graph:{i}:{j}")
    values = [0] * (j * i * i) + list(nodes)
    for t, a, b in arcs:
        values[t * i * i + a * i + b] = 1
    return space.point(values)


def decode_graph(point: ConfigPoint) -> tuple[tuple[int, ...], frozenset]:
    names = point.space.names
    i = sum(1 for n in names if n.startswith("attr_"))
    rel = len(names) - i
    arcs = set()
    for k in range(rel):
        if point.values[k]:
            t, rest = divmod(k, i * i)
            a, b = divmod(rest, i)
            arcs.add((t, a, b))
    return tuple(point.values[rel:]), frozenset(arcs)


def _tokenize(s: str, dictionary: Mapping[str, str]) -> list[str]:
    keys = sorted(dictionary, key=len, reverse=True)
    tokens, pos = [], 0
    while pos < len(s):
        if s[pos].isspace():
            pos += 1
            continue
        for k in keys:
            if k and s.startswith(k, pos):
                tokens.append(k)
                pos += len(k)
                break
        else:
            raise UnknownTokenError(f"no dictionary token matches at column {pos}: {s[pos:pos + 12]!r}")
    return tokens


def encode_string(
    s: str,
    level: int = 0,
    dictionary: Mapping[str, str] | None = None,
    alphabet: str | None = None,
) -> ConfigPoint:
    """Level 0: one dimension per non-whitespace character.
    Level 1: one dimension per dictionary token, matched greedily (longest first).
    """
    if level == 0:
        chars = [c for c in s if not c.isspace()]
        if alphabet is not None:
            dim = Dimension.integer("ch", 0, max(1, len(alphabet) - 1))
            try:
                values = [alphabet.index(c) for c in chars]
            except ValueError:
                raise UnknownTokenError("character outside the alphabet") from None
        else:
            dim = Dimension.integer("ch", 0, 0x10FFFF)
            values = [ord(c) for c in chars]
        space = ConfigSpace(tuple(dim.renamed(f"ch{k}") for k in range(len(chars))), name="string:0")
        return space.point(values)
    if level == 1:
        if dictionary is None:
            raise ValueError("level 1 needs a token dictionary")
        symbols = list(dict.fromkeys(dictionary.values()))
        tokens = _tokenize(s, dictionary)
        dim = Dimension.integer("tok", 0, max(1, len(symbols) - 1))
        space = ConfigSpace(tuple(dim.renamed(f"tok{k}") for k in range(len(tokens))), name="string:1")
        return space.point([symbols.index(dictionary[t]) for t in tokens])
    raise ValueError("only levels 0 and 1 are supported")


def string_symbols(point: ConfigPoint, dictionary: Mapping[str, str]) -> list[str]:
    symbols = list(dict.fromkeys(dictionary.values()))
    return [symbols[v] for v in point.values]


# input/output redundancy ----------------------------------------------------------


@dataclass
class RedundancyReport:
    groups: list[list[tuple]]
    redundancy: float
    n_inputs: int
    n_outputs: int

    def to_json(self) -> dict:
        return {"redundancy_groups": [[list(v) for v in g] for g in self.groups], "redundancy": self.redundancy}


def io_mapping_redundancy(
    mapping: Callable[[ConfigPoint], Hashable],
    input_space: ConfigSpace,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> RedundancyReport:
    """Group input points that produce the same output (isolines)."""
    input_space.require_enumerable(cap, "redundancy analysis")
    groups: dict = {}
    for p in input_space.iter_points(cap):
        out = mapping(p)
        key = out.values if isinstance(out, ConfigPoint) else out
        groups.setdefault(key, []).append(p.values)
    n = input_space.size
    redundant = [g for g in groups.values() if len(g) > 1]
    return RedundancyReport(redundant, (n - len(groups)) / n if n else 0.0, n, len(groups))
