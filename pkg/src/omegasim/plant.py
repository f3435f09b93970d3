"""Configurable plants: automata whose every configuration is a sub-plant.

A sub-plant at address i carries a constant successor j_i and an output
function f_i of the functional input.  Successors never depend on input;
conditional behaviour comes only from disturbances injected from outside.
Addresses are mixed-radix indices into the plant's configuration space.
"""

from __future__ import annotations

import copy
import hashlib
import heapq
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .configspace import (
    DEFAULT_ENUMERATION_CAP,
    ConfigPoint,
    ConfigSpace,
    Dimension,
    bits_for,
    popcount,
)
from .errors import (
    CapacityError,
    DisturbanceRangeError,
    DomainError,
    MappingError,
    RangeError,
)

TABLE_CAP = 2**16
POLICIES = ("clamp", "wrap", "strict")

DEGENERATE = "degenerate"  # output marker: the sub-plant emits its own configuration values


@dataclass(frozen=True)
class Jump:
    """Disturbance that forces the plant to an absolute address."""

    address: int


@dataclass(frozen=True)
class SubPlant:
    successor: int
    output: Any = DEGENERATE
    alternates: tuple[tuple[float, int], ...] = ()
    inner: "Plant | None" = None

    def __post_init__(self):
        if self.alternates:
            total = math.fsum(p for p, _ in self.alternates)
            if not math.isclose(total, 1.0, abs_tol=1e-9):
                raise ValueError(f"alternate probabilities sum to {total}, not 1")
            if any(p < 0 for p, _ in self.alternates):
                raise ValueError("negative alternate probability")

    def describe_output(self) -> str:
        if isinstance(self.output, Mapping):
            return repr(sorted(self.output.items(), key=repr))
        if callable(self.output):
            return getattr(self.output, "__qualname__", repr(self.output))
        return repr(self.output)


@dataclass(frozen=True)
class Divergence:
    """A divergence point: the successor at ``address`` is chosen by a parameter."""

    address: int
    branches: tuple[int, ...]

    @property
    def dimension_template(self) -> Dimension:
        if len(self.branches) == 2:
            return Dimension.boolean("_")
        return Dimension.integer("_", 0, len(self.branches) - 1)


@dataclass(frozen=True)
class ReliabilityParams:
    epsilon: float  # technological unreliability, 1/tick
    m: float  # implementation bandwidth, bits/tick
    psi: float  # plant configuration size, bits


def reliability(params: ReliabilityParams) -> float:
    """R = m / (epsilon * psi), a unitless factor."""
    if params.epsilon < 0 or params.psi < 0 or params.m < 0:
        raise ValueError("reliability parameters must be non-negative")
    if params.epsilon == 0 or params.psi == 0:
        raise DomainError("reliability undefined for zero epsilon or zero psi")
    return params.m / (params.epsilon * params.psi)


class Plant:
    """Tabulated plant over a finite configuration space (total sub-plant map)."""

    def __init__(
        self,
        space: ConfigSpace,
        sub_plants: Sequence[SubPlant] | Mapping[int, SubPlant],
        active: int = 0,
        clock_rate=1,
        corrective_field: Mapping[int, int] | None = None,
        program: Sequence[int] = (),
        divergences: Mapping[str, Divergence] | None = None,
        policy: str = "clamp",
        seed: int = 0,
        cap: int = TABLE_CAP,
    ):
        if space.size > cap:
            raise CapacityError(f"tabulated plant needs {space.size} addresses, cap is {cap}")
        n = space.size
        if isinstance(sub_plants, Mapping):
            missing = [a for a in range(n) if a not in sub_plants]
            if missing or len(sub_plants) != n:
                raise ValueError(f"sub-plant map is not total (missing {missing[:8]})")
            table = [sub_plants[a] for a in range(n)]
        else:
            table = list(sub_plants)
            if len(table) != n:
                raise ValueError(f"expected {n} sub-plants, got {len(table)}")
        for a, sp in enumerate(table):
            targets = [sp.successor] + [t for _, t in sp.alternates]
            if any(not 0 <= t < n for t in targets):
                raise RangeError(space.name, targets, f"successor of address {a}")
        if policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        self.space = space
        self.table = table
        self.corrective_field = dict(corrective_field or {})
        for a, t in self.corrective_field.items():
            if not (0 <= a < n and 0 <= t < n):
                raise RangeError(space.name, (a, t), "corrective field entry")
        self.program = tuple(program)
        self.divergences = dict(divergences or {})
        self.settings = {name: 0 for name in self.divergences}
        for name, dv in self.divergences.items():
            if not 0 <= dv.address < n or any(not 0 <= b < n for b in dv.branches):
                raise RangeError(name, dv, "divergence outside space")
            if table[dv.address].successor in dv.branches:
                self.settings[name] = dv.branches.index(table[dv.address].successor)
        self.clock_rate = Fraction(clock_rate)
        if self.clock_rate <= 0:
            raise ValueError("clock_rate must be positive")
        self._phase = Fraction(0)
        self.policy = policy
        self.seed = seed
        self._rng = random.Random(seed)
        self.active = self._check_address(active)

    # identity ------------------------------------------------------------

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def psi_bits(self) -> int:
        """Bits of the most compact selection among distinguishable sub-plant setups."""
        if self.divergences:
            return bits_for(len(set(self.selection_tables().values())))
        return bits_for(self.size)

    def copy(self) -> "Plant":
        dup = copy.copy(self)
        dup.table = [
            SubPlant(sp.successor, sp.output, sp.alternates, sp.inner.copy()) if sp.inner else sp
            for sp in self.table
        ]
        dup.corrective_field = dict(self.corrective_field)
        dup.settings = dict(self.settings)
        dup._rng = random.Random()
        dup._rng.setstate(self._rng.getstate())
        return dup

    def successor_map(self) -> tuple[int, ...]:
        """Effective autonomous successors, corrective overrides applied."""
        cf = self.corrective_field
        return tuple(cf.get(a, sp.successor) for a, sp in enumerate(self.table))

    def table_hash(self) -> str:
        h = hashlib.sha256()
        for a, sp in enumerate(self.table):
            h.update(f"{a}:{sp.successor}:{sp.alternates}:{sp.describe_output()};".encode())
            if sp.inner is not None:
                h.update(sp.inner.table_hash().encode())
        h.update(repr(sorted(self.corrective_field.items())).encode())
        return h.hexdigest()

    # addressing ----------------------------------------------------------

    def _check_address(self, a: int) -> int:
        if not 0 <= a < self.size:
            raise RangeError(self.space.name, a, "plant address")
        return int(a)

    def address_of(self, point) -> int:
        if isinstance(point, ConfigPoint):
            return point.index
        return self.space.point(point).index

    @property
    def point(self) -> ConfigPoint:
        return self.space.point_from_index(self.active)

    @property
    def values(self) -> tuple:
        return self.point.values

    def implement(self, point) -> None:
        """Swap the active configuration (spontaneous reconfiguration)."""
        self.active = self.address_of(point)

    def _resolve(self, target: int) -> int:
        n = self.size
        if 0 <= target < n:
            return target
        if self.policy == "strict":
            raise DisturbanceRangeError(f"disturbance leads to address {target}, outside 0..{n - 1}")
        if self.policy == "wrap":
            return target % n
        return nearest_address(self.space, target % (1 << self.space.total_width))

    def apply_disturbance(self, base: int, disturbance) -> int:
        if disturbance is None:
            return base
        if isinstance(disturbance, Jump):
            return self._resolve(disturbance.address)
        return self._resolve(base + int(disturbance))

    # execution -----------------------------------------------------------

    def output_of(self, address: int, input=None):
        sp = self.table[address]
        if sp.inner is not None:
            return sp.inner.step(input)[1]
        return evaluate_output(sp.output, self.space, address, input)

    def autonomous_successor(self, address: int) -> int:
        if address in self.corrective_field:
            return self.corrective_field[address]
        sp = self.table[address]
        if sp.alternates:
            r = self._rng.random()
            acc = 0.0
            for p, t in sp.alternates:
                acc += p
                if r < acc:
                    return t
            return sp.alternates[-1][1]
        return sp.successor

    def step(self, input=None, disturbance=None) -> tuple[int, Any]:
        """One plant step: emit f_active(input), move to j_active, then apply the disturbance."""
        out = self.output_of(self.active, input)
        nxt = self.autonomous_successor(self.active)
        self.active = self.apply_disturbance(nxt, disturbance)
        return self.active, out

    def steps_due(self) -> int:
        """Advance the phase accumulator by one engine tick; return whole plant steps due."""
        self._phase += self.clock_rate
        k = math.floor(self._phase)
        self._phase -= k
        return k

    def advance(self, input=None) -> list:
        return [self.step(input)[1] for _ in range(self.steps_due())]

    def run(self, inputs: Iterable, disturbances: Mapping[int, Any] | None = None) -> list[tuple[int, Any]]:
        disturbances = disturbances or {}
        trace = []
        for t, x in enumerate(inputs):
            a = self.active
            _, out = self.step(x, disturbances.get(t))
            trace.append((a, out))
        return trace

    # divergences -----------------------------------------------------------

    def divergence_space(self) -> ConfigSpace:
        dims = tuple(dv.dimension_template.renamed(name) for name, dv in self.divergences.items())
        return ConfigSpace(dims, name="divergences")

    def remap(self, params) -> "Plant":
        """New plant whose divergence successors follow ``params``; nothing else changes."""
        if isinstance(params, ConfigPoint):
            updates = dict(zip(params.space.names, params.values))
        else:
            updates = dict(params)
        for name in updates:
            if name not in self.divergences:
                raise MappingError(f"{name!r} is not a registered divergence point")
        dup = self.copy()
        for name, value in updates.items():
            dv = self.divergences[name]
            k = int(value)
            if not 0 <= k < len(dv.branches):
                raise RangeError(name, value, "divergence branch")
            sp = dup.table[dv.address]
            dup.table[dv.address] = SubPlant(dv.branches[k], sp.output, sp.alternates, sp.inner)
            dup.settings[name] = k
        return dup

    def selection_tables(self) -> dict[tuple, tuple[int, ...]]:
        """Successor map for every assignment of the divergence parameters."""
        names = list(self.divergences)
        ranges = [range(len(self.divergences[n].branches)) for n in names]
        return {
            combo: self.remap(dict(zip(names, combo))).successor_map()
            for combo in product(*ranges)
        }


def evaluate_output(output, space: ConfigSpace, address: int, input):
    if isinstance(output, str) and output == DEGENERATE:
        return space.point_from_index(address).values
    if isinstance(output, Mapping):
        return output[input]
    if callable(output):
        return output(input)
    return output


def nearest_address(space: ConfigSpace, code: int) -> int:
    """Valid address whose code is closest (bitwise) to ``code``; ties to the lowest address."""
    if space.is_valid_code(code):
        return space.point_from_code(code).index
    codes = space.codes()
    d = popcount(codes ^ code)
    best = codes[d == d.min()]
    return min(space.point_from_code(int(c)).index for c in best)


# selection coding -------------------------------------------------------------


@dataclass(frozen=True)
class SelectionCode:
    lengths: dict  # behaviour -> code length in bits
    probabilities: dict  # behaviour -> prior mass
    expected: Fraction
    max_length: int
    psi_bits: int


def huffman_lengths(weights: Mapping[Any, Fraction]) -> dict:
    """Optimal prefix-code lengths; deterministic tie-breaking by insertion order."""
    keys = list(weights)
    if len(keys) == 1:
        return {keys[0]: 0}
    heap = [(weights[k], i, (i,)) for i, k in enumerate(keys)]
    heapq.heapify(heap)
    depth = [0] * len(keys)
    counter = len(keys)
    while len(heap) > 1:
        w1, _, g1 = heapq.heappop(heap)
        w2, _, g2 = heapq.heappop(heap)
        for i in g1 + g2:
            depth[i] += 1
        heapq.heappush(heap, (w1 + w2, counter, g1 + g2))
        counter += 1
    return {k: depth[i] for i, k in enumerate(keys)}


def trajectory(successors: Sequence[int], start: int) -> tuple[int, ...]:
    """Addresses visited from ``start`` until the first repeat."""
    seen, path = set(), []
    a = start
    while a not in seen:
        seen.add(a)
        path.append(a)
        a = successors[a]
    path.append(a)
    return tuple(path)


def selection_code(plant: Plant, start: int | None = None) -> SelectionCode:
    """Optimal prefix storage of the divergence selection, by behaviour from ``start``.

    Assignments are equally likely; assignments that produce the same
    behaviour (e.g. a parameter that only matters on an unvisited branch)
    share one code word.
    """
    start = plant.active if start is None else start
    tables = plant.selection_tables()
    mass: dict = {}
    for combo, succ in tables.items():
        key = trajectory(succ, start)
        mass[key] = mass.get(key, Fraction(0)) + Fraction(1, len(tables))
    lengths = huffman_lengths(mass)
    expected = sum((mass[k] * lengths[k] for k in mass), Fraction(0))
    return SelectionCode(
        lengths, mass, expected, max(lengths.values()), bits_for(len(set(tables.values())))
    )


def ab_divergence_plant() -> Plant:
    """Eight-address plant with two binary divergence points A and B.

    0 -> 1 -> 2, then A picks 3 (-> 4, resting) or 5; at 5, B picks the
    resting ends 6 or 7.  B only matters when A = 1.
    """
    space = ConfigSpace.booleans(3, prefix="s")
    succ = [1, 2, 3, 4, 4, 6, 6, 7]
    table = [SubPlant(s) for s in succ]
    return Plant(
        space,
        table,
        divergences={"A": Divergence(2, (3, 5)), "B": Divergence(5, (6, 7))},
        program=(0, 1, 2),
    )


# corrective fields and cycles -------------------------------------------------


def build_corrective_field(space: ConfigSpace, program: Sequence[int], radius: int) -> dict[int, int]:
    """Overrides that move each point within ``radius`` bits of the program one bit closer.

    Ties between candidate neighbours go to the lowest code.
    """
    space.require_enumerable(DEFAULT_ENUMERATION_CAP, "corrective field")
    prog_codes = np.array(sorted({space.point_from_index(a).code for a in program}), dtype=np.int64)
    codes = space.codes()
    valid = set(codes.tolist())
    field_map: dict[int, int] = {}
    on_program = set(prog_codes.tolist())
    for c in codes.tolist():
        if c in on_program:
            continue
        d = int(popcount(prog_codes ^ c).min())
        if d > radius:
            continue
        best = None
        for k in range(space.total_width):
            nb = c ^ (1 << k)
            if nb in valid and int(popcount(prog_codes ^ nb).min()) == d - 1:
                if best is None or nb < best:
                    best = nb
        field_map[space.point_from_code(c).index] = space.point_from_code(best).index
    return field_map


def corrective_field_violations(plant: Plant, radius: int) -> list[int]:
    """Addresses within ``radius`` bits of the program that fail to rejoin it in <= radius steps."""
    space = plant.space
    prog = set(plant.program)
    prog_codes = np.array(sorted(space.point_from_index(a).code for a in prog), dtype=np.int64)
    succ = plant.successor_map()
    bad = []
    for a in range(plant.size):
        if a in prog:
            continue
        d = int(popcount(prog_codes ^ space.point_from_index(a).code).min())
        if d > radius:
            continue
        x = a
        for _ in range(radius):
            x = succ[x]
            if x in prog:
                break
        if x not in prog:
            bad.append(a)
    return bad


def find_cycle(successors: Sequence[int], start: int) -> tuple[int, int]:
    """(steps before the cycle, cycle length); always found within len(successors) steps."""
    first_seen = {}
    a, t = start, 0
    while a not in first_seen:
        if t > len(successors):
            raise RuntimeError("cycle detection exceeded the space size")
        first_seen[a] = t
        a = successors[a]
        t += 1
    return first_seen[a], t - first_seen[a]


# pseudo-decisions -----------------------------------------------------------


@dataclass
class PseudoDecisionTrace:
    addresses: list[int]
    outputs: list
    hash_before: str
    hash_after: str

    @property
    def policy_unchanged(self) -> bool:
        return self.hash_before == self.hash_after


def pseudo_decision_run(
    plant: Plant, schedule: Mapping[int, Any], ticks: int, inputs: Sequence | None = None
) -> PseudoDecisionTrace:
    """Run a copy of ``plant`` under a fixed disturbance schedule."""
    work = plant.copy()
    before = work.table_hash()
    addresses, outputs = [work.active], []
    for t in range(ticks):
        x = inputs[t] if inputs is not None else None
        a, out = work.step(x, schedule.get(t))
        addresses.append(a)
        outputs.append(out)
    return PseudoDecisionTrace(addresses, outputs, before, work.table_hash())


# nesting ----------------------------------------------------------------------


def _expand_alternates(sp: SubPlant, override: int | None) -> list[tuple[float, int]]:
    if override is not None:
        return [(1.0, override)]
    if sp.alternates:
        return list(sp.alternates)
    return [(1.0, sp.successor)]


def flatten(plant: Plant, cap: int = TABLE_CAP) -> Plant:
    """Flat plant over the product of the outer space and every inner space.

    Flat state = (outer address, state of each nested sub-plant).  Each step
    moves the outer part to j_a and, when sub-plant a is nested, steps that
    inner plant; all other inner states hold.
    """
    nested = [a for a, sp in enumerate(plant.table) if sp.inner is not None]
    if not nested:
        return plant.copy()
    inners = {a: flatten(plant.table[a].inner, cap) for a in nested}
    dims = list(plant.space.dimensions)
    for a in nested:
        dims += [d.renamed(f"in{a}.{d.name}") for d in inners[a].space.dimensions]
    flat_space = ConfigSpace(tuple(dims), name=plant.space.name)
    if flat_space.size > cap:
        raise CapacityError(f"flattened plant needs {flat_space.size} addresses, cap is {cap}")
    sizes = [inners[a].size for a in nested]
    inner_total = math.prod(sizes)

    def pack(outer: int, states: Sequence[int]) -> int:
        idx = 0
        for s, n in zip(states, sizes):
            idx = idx * n + s
        return outer * inner_total + idx

    table = []
    for flat in range(flat_space.size):
        outer, rest = divmod(flat, inner_total)
        states = []
        for n in reversed(sizes):
            rest, s = divmod(rest, n)
            states.append(s)
        states.reverse()
        sp = plant.table[outer]
        outer_moves = _expand_alternates(sp, plant.corrective_field.get(outer))
        if sp.inner is not None:
            k = nested.index(outer)
            inner = inners[outer]
            isp = inner.table[states[k]]
            inner_moves = _expand_alternates(isp, inner.corrective_field.get(states[k]))
            output = _InnerOutput(inner.space, isp.output, states[k])
        else:
            k, inner_moves = None, [(1.0, None)]
            output = _OuterOutput(plant.space, sp.output, outer)
        moves: Counter = Counter()
        for (p1, o), (p2, i) in product(outer_moves, inner_moves):
            new_states = list(states)
            if k is not None:
                new_states[k] = i
            moves[pack(o, new_states)] += p1 * p2
        if len(moves) == 1:
            table.append(SubPlant(next(iter(moves)), output))
        else:
            alts = tuple((p, t) for t, p in sorted(moves.items()))
            table.append(SubPlant(alts[0][1], output, alts))
    active = pack(plant.active, [inners[a].active for a in nested])
    program = tuple(pack(a, [inners[b].active for b in nested]) for a in plant.program)
    return Plant(flat_space, table, active, plant.clock_rate, program=program, policy=plant.policy, seed=plant.seed, cap=cap)


@dataclass(frozen=True)
class _OuterOutput:
    space: ConfigSpace
    output: Any
    address: int

    def __call__(self, input):
        return evaluate_output(self.output, self.space, self.address, input)


@dataclass(frozen=True)
class _InnerOutput:
    space: ConfigSpace
    output: Any
    address: int

    def __call__(self, input):
        return evaluate_output(self.output, self.space, self.address, input)


# cell arrays ------------------------------------------------------------------


class ArrayPlant:
    """Homogeneous array of independent cells sharing one tabulated cell plant.

    The configuration is the tuple of cell addresses; each cell steps with the
    shared successor table and the output is the tuple of cell outputs.  Used
    where the full product space is far too large to tabulate.
    """

    def __init__(self, cell: Plant, count: int, prefix: str = "cell", active: Sequence[int] | None = None, clock_rate=1):
        if cell.divergences or any(sp.alternates or sp.inner for sp in cell.table):
            raise ValueError("array cells must be plain deterministic tabulated plants")
        self.cell = cell
        self.count = count
        self.prefix = prefix
        self.space = ConfigSpace.array(prefix, cell.space.dimensions[0], count) if len(cell.space) == 1 else ConfigSpace(
            tuple(d.renamed(f"{prefix}[{k}].{d.name}") for k in range(count) for d in cell.space.dimensions)
        )
        self.cells = list(active) if active is not None else [cell.active] * count
        if len(self.cells) != count:
            raise ValueError("active cell vector has the wrong length")
        self._succ = cell.successor_map()
        self.clock_rate = Fraction(clock_rate)
        self._phase = Fraction(0)
        self.program = ()
        self.corrective_field = {}

    @classmethod
    def static(cls, template: Dimension, count: int, prefix: str = "cell") -> "ArrayPlant":
        """Array of self-looping cells whose output is their own value."""
        cs = ConfigSpace((template.renamed("v"),))
        cell = Plant(cs, [SubPlant(a) for a in range(cs.size)])
        return cls(cell, count, prefix)

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def psi_bits(self) -> int:
        return self.space.total_width

    def copy(self) -> "ArrayPlant":
        dup = copy.copy(self)
        dup.cells = list(self.cells)
        return dup

    def successor_map(self):
        raise CapacityError("array plants are not tabulated; use cell_successors")

    def cell_successors(self) -> tuple[int, ...]:
        return tuple(self._succ)

    def table_hash(self) -> str:
        return hashlib.sha256(f"array:{self.count}:{self.cell.table_hash()}".encode()).hexdigest()

    @property
    def point(self) -> ConfigPoint:
        key = tuple(self.cells)
        cached = getattr(self, "_point_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        per = {a: self.cell.space.indices_of_index(a) for a in set(key)}
        idx = [i for a in key for i in per[a]]
        pt = self.space.point_from_indices(idx)
        self._point_cache = (key, pt)
        return pt

    @property
    def values(self) -> tuple:
        return self.point.values

    @property
    def active(self) -> int:
        return self.point.index

    def implement(self, point) -> None:
        p = point if isinstance(point, ConfigPoint) else self.space.point(point)
        w = len(self.cell.space)
        vals = p.values
        self.cells = [self.cell.space.point(vals[k * w : (k + 1) * w]).index for k in range(self.count)]

    def set_cells(self, positions: Mapping[int, int]) -> None:
        for k, a in positions.items():
            if not 0 <= a < self.cell.size:
                raise RangeError(f"{self.prefix}[{k}]", a, "cell address")
            self.cells[k] = a

    def step(self, input=None, disturbance=None):
        per = {a: evaluate_output(self.cell.table[a].output, self.cell.space, a, input) for a in set(self.cells)}
        out = tuple(per[a] for a in self.cells)
        self.cells = [self._succ[a] for a in self.cells]
        if disturbance is not None:
            if isinstance(disturbance, Mapping):
                self.set_cells(disturbance)
            else:
                raise DisturbanceRangeError("array plants take {cell: address} disturbances")
        return self.active, out

    def steps_due(self) -> int:
        self._phase += self.clock_rate
        k = math.floor(self._phase)
        self._phase -= k
        return k

    def advance(self, input=None) -> list:
        return [self.step(input)[1] for _ in range(self.steps_due())]

    def fragment(self, cells: Sequence[int]) -> "ArrayPlant":
        """Sub-array over the given cells, keeping their dimension names."""
        frag = ArrayPlant(self.cell, len(cells), self.prefix, [self.cells[k] for k in cells], self.clock_rate)
        w = len(self.cell.space)
        frag.space = ConfigSpace(tuple(self.space.dimensions[k * w + j] for k in cells for j in range(w)))
        return frag
