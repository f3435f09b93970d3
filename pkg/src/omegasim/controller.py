"""The configurator: strategies, damage, eligibility, cost fields and planners.

A strategy is a timed list of reconfiguration steps.  Its real-time length
comes from the channel model, never from the cost; cost is effort only.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .channels import ChannelSet, ticks_for
from .configspace import (
    REAL,
    ConfigPoint,
    ConfigSpace,
    bit_distance,
    flip_masks,
    mask_count,
)
from .errors import (
    CapacityError,
    ConflictError,
    EmptyMemoryError,
    InfeasibleStrategyError,
    NoEligibleStrategyError,
    PreconditionError,
    SpaceMismatchError,
)
from .storage import Repository, delta_encode

SPONTANEOUS = "spontaneous"
ITERATIVE = "iterative"
STOCHASTIC = "stochastic"
MEMORY = "memory"
MIXING = "mixing"
FAMILIES = (SPONTANEOUS, ITERATIVE, STOCHASTIC, MEMORY, MIXING)

PENALTY_FLOOR = 1e6
CLOCK_GAMMA = Fraction(1, 10)
NEIGHBOR_CAP = 2**16


@dataclass(frozen=True)
class Step:
    target: ConfigPoint
    tick: int  # offset at which implementation starts
    bits: int  # payload moved over the implementation channel


@dataclass(frozen=True)
class Strategy:
    id: str
    steps: tuple[Step, ...]
    t_reconf: int
    cost: float
    family: str = SPONTANEOUS
    status: str = "goal"
    approximate: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown strategy family {self.family!r}")
        if self.cost < 0:
            raise ValueError("strategy cost must be non-negative")

    @property
    def path(self) -> list[ConfigPoint]:
        return [s.target for s in self.steps]

    @property
    def payload_bits(self) -> int:
        return sum(s.bits for s in self.steps)


def step_bits(previous: ConfigPoint, target: ConfigPoint, mode: str = "full") -> int:
    """Implementation payload: the whole pattern, or a delta of the differing bits."""
    if mode == "full":
        return target.space.total_width
    if mode == "delta":
        return delta_encode(previous.bits, target.bits).payload_bits
    raise ValueError(f"unknown payload mode {mode!r}")


def make_strategy(
    id: str,
    start: ConfigPoint,
    targets: Sequence[ConfigPoint],
    channels: ChannelSet,
    family: str = SPONTANEOUS,
    mode: str = "full",
    gap: int = 0,
    cost: float | None = None,
    channel: str = "m",
    status: str = "goal",
) -> Strategy:
    """Schedule ``targets`` back to back (``gap`` plant ticks between steps)."""
    rate = channels.rate(channel)
    steps, tick, prev = [], 0, start
    for k, t in enumerate(targets):
        bits = step_bits(prev, t, mode)
        steps.append(Step(t, tick, bits))
        tick += ticks_for(bits, rate)
        if k < len(targets) - 1:
            tick += gap
        prev = t
    total = sum(s.bits for s in steps)
    return Strategy(id, tuple(steps), tick, float(total) if cost is None else cost, family, status)


# look-ahead and damage -------------------------------------------------------


@dataclass(frozen=True)
class TickState:
    tick: int
    config: ConfigPoint
    implementing: int | None  # index of the step being implemented, if any


class Lookahead:
    """Deterministic clone-simulation of a strategy against the channel model."""

    def __init__(self, start: ConfigPoint, channels: ChannelSet, channel: str = "m"):
        self.start = start
        self.channels = channels
        self.channel = channel

    def states(self, strategy: Strategy) -> list[TickState]:
        rate = self.channels.rate(self.channel)
        windows = []
        free_at = 0
        for k, s in enumerate(strategy.steps):
            if s.tick < free_at:
                raise InfeasibleStrategyError(
                    f"strategy {strategy.id}: step {k} starts at {s.tick} but the channel is busy until {free_at}"
                )
            end = s.tick + ticks_for(s.bits, rate)
            windows.append((s.tick, end, k))
            free_at = end
        if free_at > strategy.t_reconf:
            raise InfeasibleStrategyError(
                f"strategy {strategy.id}: needs {free_at} ticks, declares {strategy.t_reconf}"
            )
        out, config = [], self.start
        w = 0
        for t in range(1, strategy.t_reconf + 1):
            # tick t covers the interval [t-1, t)
            while w < len(windows) and windows[w][1] <= t - 1:
                config = strategy.steps[windows[w][2]].target
                w += 1
            busy = None
            if w < len(windows) and windows[w][0] <= t - 1 < windows[w][1]:
                busy = windows[w][2]
            out.append(TickState(t, config, busy))
        return out


@dataclass(frozen=True)
class DamageModel:
    d: Callable[[int, TickState], float]
    cap: float = math.inf


def evaluate_damage(strategy: Strategy, model: DamageModel, lookahead: Lookahead) -> float:
    """Sum of d(t, state) over t = 1..t_reconf along the simulated strategy."""
    total = 0.0
    for st in lookahead.states(strategy):
        v = float(model.d(st.tick, st))
        if v < 0:
            raise ValueError("damage must be non-negative")
        total += v
    return total


def damage_table(strategies: Iterable[Strategy], model: DamageModel, lookahead: Lookahead) -> dict[str, float]:
    return {s.id: evaluate_damage(s, model, lookahead) for s in strategies}


def worst_case_damage(strategies: Iterable[Strategy], model: DamageModel, lookahead: Lookahead) -> float:
    table = damage_table(strategies, model, lookahead)
    if not table:
        raise ValueError("no strategies")
    return max(table.values())


def eligible_strategies(
    candidates: Sequence[Strategy],
    model: DamageModel,
    lookahead: Lookahead | None = None,
    damages: Mapping[str, float] | None = None,
) -> list[Strategy]:
    """Candidates whose summed damage stays strictly below the cap."""
    if damages is None:
        if lookahead is None:
            raise ValueError("need either a look-ahead or precomputed damages")
        damages = damage_table(candidates, model, lookahead)
    return [s for s in candidates if damages[s.id] < model.cap]


def select_strategy(eligible: Sequence[Strategy]) -> Strategy:
    """Least cost; ties to the shorter real time, then the lower id."""
    if not eligible:
        raise NoEligibleStrategyError("no strategy satisfies the damage cap")
    return min(eligible, key=lambda s: (s.cost, s.t_reconf, s.id))


# guiding cost field --------------------------------------------------------------


@dataclass(frozen=True)
class CostField:
    attractor: Callable[[ConfigPoint], float]
    penalty: Callable[[ConfigPoint], float]
    quality: Callable[[ConfigPoint], float]
    radius: Callable[[ConfigPoint, ConfigPoint], float]
    penalty_floor: float = PENALTY_FLOOR

    @classmethod
    def default(
        cls,
        space: ConfigSpace,
        goal: ConfigPoint,
        attractor_weight: float = 1.0,
        penalty_floor: float = PENALTY_FLOOR,
        radius_weight: float = 0.1,
        quality: Callable[[ConfigPoint], float] | None = None,
    ) -> "CostField":
        def attractor(c2):
            return attractor_weight * bit_distance(c2, goal)

        def penalty(c2):
            v = space.violations(c2)
            return 0.0 if v == 0 else penalty_floor * max(1, v)

        def radius(c1, c2):
            return radius_weight * bit_distance(c1, c2)

        return cls(attractor, penalty, quality or (lambda c2: 0.0), radius, penalty_floor)


def guiding_cost(field: CostField, c1: ConfigPoint, c2: ConfigPoint) -> float:
    if c1.space is not c2.space and c1.space != c2.space:
        raise SpaceMismatchError("cost field evaluated across spaces")
    return field.attractor(c2) + field.penalty(c2) + field.quality(c2) + field.radius(c1, c2)


# planners -------------------------------------------------------------------------


def _masks(space: ConfigSpace, budget: int) -> np.ndarray:
    if mask_count(space.total_width, budget) > NEIGHBOR_CAP:
        raise CapacityError(f"step budget {budget} over {space.total_width} bits has too many neighbours")
    return flip_masks(space.total_width, budget)


def _neighbors(space: ConfigSpace, c: ConfigPoint, masks: np.ndarray) -> list[ConfigPoint]:
    out = []
    for m in masks.tolist():
        code = c.code ^ m
        if space.is_valid_code(code):
            out.append(space.point_from_code(code))
    out.sort(key=lambda p: p.code)
    return out


def _greedy_move(field: CostField, space: ConfigSpace, c1: ConfigPoint, masks: np.ndarray) -> ConfigPoint | None:
    here = guiding_cost(field, c1, c1)
    best, best_cost = None, here
    for c2 in _neighbors(space, c1, masks):
        v = guiding_cost(field, c1, c2)
        if v < best_cost:
            best, best_cost = c2, v
    return best


def _finish(id, start, path, channels, family, status, field, mode="delta") -> Strategy:
    if channels is None:
        channels = ChannelSet(1, 1, 1, 1)
    cost = 0.0
    prev = start
    for p in path:
        cost += guiding_cost(field, prev, p)
        prev = p
    strat = make_strategy(id, start, path, channels, family, mode=mode, cost=max(0.0, cost), status=status)
    return strat


def plan_deterministic(
    start: ConfigPoint,
    goal: ConfigPoint,
    field: CostField,
    step_budget: int,
    channels: ChannelSet | None = None,
    max_steps: int = 1000,
    id: str = "det",
) -> Strategy:
    """Greedy descent on C: move to the cheapest neighbour while it beats staying put."""
    space = start.space
    if not space.is_legal(start):
        raise PreconditionError("deterministic planning needs a legal start")
    masks = _masks(space, step_budget)
    path, c1, status = [], start, "goal"
    while c1 != goal:
        if len(path) >= max_steps:
            status = "step_cap"
            break
        nxt = _greedy_move(field, space, c1, masks)
        if nxt is None:
            status = "local_minimum"
            break
        path.append(nxt)
        c1 = nxt
    family = ITERATIVE if len(path) > 1 else SPONTANEOUS
    return _finish(id, start, path, channels, family, status, field)


def temperature_schedule(t0: float, alpha: float = 0.95, floor: float = 0.0) -> Callable[[int], float]:
    """Geometric cooling T(k) = max(floor, t0 * alpha**k)."""
    return lambda k: max(floor, t0 * alpha**k)


def plan_stochastic(
    start: ConfigPoint,
    goal: ConfigPoint,
    field: CostField,
    step_budget: int,
    seed: int,
    schedule: Callable[[int], float] | float = 0.0,
    channels: ChannelSet | None = None,
    max_steps: int = 2000,
    id: str = "sa",
) -> Strategy:
    """Simulated-annealing walk on C; at T = 0 it is the greedy planner exactly."""
    space = start.space
    if not space.is_legal(start):
        raise PreconditionError("stochastic planning needs a legal start")
    temp = schedule if callable(schedule) else (lambda k, t=float(schedule): t)
    rng = random.Random(seed)
    masks = _masks(space, step_budget)
    mask_list = masks.tolist()
    path, c1, status = [], start, "goal"
    k = 0
    while c1 != goal:
        if k >= max_steps:
            status = "step_cap"
            break
        T = temp(k)
        k += 1
        if T <= 0:
            nxt = _greedy_move(field, space, c1, masks)
            if nxt is None:
                status = "local_minimum"
                break
            path.append(nxt)
            c1 = nxt
            continue
        code = c1.code ^ mask_list[rng.randrange(len(mask_list))]
        if not space.is_valid_code(code):
            continue
        c2 = space.point_from_code(code)
        delta = guiding_cost(field, c1, c2) - guiding_cost(field, c1, c1)
        if delta <= 0 or rng.random() < math.exp(-delta / T):
            path.append(c2)
            c1 = c2
    return _finish(id, start, path, channels, STOCHASTIC if path else SPONTANEOUS, status, field)


def plan_memory(
    repo: Repository,
    trigger: str,
    space: ConfigSpace,
    channels: ChannelSet | None = None,
    start: ConfigPoint | None = None,
    id: str = "mem",
) -> Strategy:
    """Recall the pattern associated with ``trigger`` as a one-step strategy.

    Unknown triggers fall back to the nearest stored signature (bit distance,
    ties to the lowest address) and the strategy is flagged approximate.
    """
    if not repo.triggers:
        raise EmptyMemoryError("repository holds no trigger associations")
    if trigger in repo.triggers:
        addr, approx = repo.triggers[trigger], False
    else:
        scored = []
        for sig, a in repo.triggers.items():
            if len(sig) != len(trigger):
                continue
            d = sum(x != y for x, y in zip(sig, trigger))
            scored.append((d, a))
        if not scored:
            raise EmptyMemoryError("no stored signature has the trigger's width")
        addr, approx = min(scored)[1], True
    target = space.decode(repo.retrieve(addr).bits)
    start = start if start is not None else target
    channels = channels or ChannelSet(1, 1, 1, 1)
    strat = make_strategy(id, start, [target], channels, MEMORY)
    return Strategy(strat.id, strat.steps, strat.t_reconf, strat.cost, MEMORY, "goal", approx)


def remember(repo: Repository, trigger: str, point: ConfigPoint) -> Repository:
    return repo.remember(trigger, point.bits)[0]


# mixing ----------------------------------------------------------------------------


def _snap(space: ConfigSpace, raw: Sequence[float]) -> ConfigPoint:
    idx = []
    for d, x in zip(space.dimensions, raw):
        x = min(max(x, d.lo), d.hi)
        if d.kind == REAL:
            idx.append(d.quantize(x))
        else:
            idx.append(int(math.floor(x - d.lo + 0.5)))
    return space.point_from_indices(idx)


def interpolate(refs: Sequence[ConfigPoint], weights: Sequence[float]) -> ConfigPoint:
    if len(refs) < 2 or len(refs) != len(weights):
        raise PreconditionError("interpolation needs >= 2 references and one weight each")
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise PreconditionError("interpolation weights must be non-negative with positive sum")
    space = refs[0].space
    total = sum(weights)
    raw = [sum(w * float(r.values[k]) for r, w in zip(refs, weights)) / total for k in range(len(space))]
    return _snap(space, raw)


def extrapolate(refs: Sequence[ConfigPoint], extend: float = 1.0) -> ConfigPoint:
    """Per-dimension least-squares line over the references, evaluated ``extend`` past the last."""
    if len(refs) < 2:
        raise PreconditionError("extrapolation needs >= 2 references")
    space = refs[0].space
    x = np.arange(len(refs), dtype=float)
    raw = []
    for k in range(len(space)):
        y = np.array([float(r.values[k]) for r in refs])
        slope, icpt = np.polyfit(x, y, 1)
        raw.append(icpt + slope * (len(refs) - 1 + extend))
    return _snap(space, raw)


def assemble_dimensions(refs: Sequence[ConfigPoint], partition: Sequence[Sequence[str]]) -> ConfigPoint:
    """Take dimension group i from reference i; uncovered dimensions come from the first reference."""
    if len(refs) != len(partition):
        raise PreconditionError("one dimension group per reference")
    owner: dict[str, int] = {}
    clashes = []
    for i, group in enumerate(partition):
        for name in group:
            if name in owner:
                clashes.append((name, owner[name], i))
            owner[name] = i
    if clashes:
        raise ConflictError(f"dimension groups overlap: {clashes}", clashes)
    space = refs[0].space
    vals = [refs[owner.get(n, 0)].values[k] for k, n in enumerate(space.names)]
    return space.point(vals)


def low_pass(stream: Sequence[ConfigPoint], alpha: float) -> list[ConfigPoint]:
    """Exponential smoothing of a target stream, quantised back onto the space."""
    if not 0 < alpha <= 1:
        raise PreconditionError("pass coefficient must lie in (0, 1]")
    if not stream:
        return []
    space = stream[0].space
    y = [float(v) for v in stream[0].values]
    out = [_snap(space, y)]
    for p in stream[1:]:
        y = [a + alpha * (float(b) - a) for a, b in zip(y, p.values)]
        out.append(_snap(space, y))
    return out


def mix(bases: Sequence[ConfigPoint], method: str, **params):
    if method == "interpolate":
        return interpolate(bases, params.get("weights", [1.0] * len(bases)))
    if method == "extrapolate":
        return extrapolate(bases, params.get("extend", 1.0))
    if method == "assemble":
        return assemble_dimensions(bases, params["partition"])
    if method == "filter":
        return low_pass(bases, params["alpha"])
    raise ValueError(f"unknown mixing method {method!r}")


# clock synchronisation -----------------------------------------------------------


@dataclass
class ClockAdjustment:
    rate: Fraction
    events: list[tuple[str, int, int]]  # (kind, expected address, actual address)

    @property
    def replan(self) -> bool:
        return any(kind == "replan" for kind, _, _ in self.events)


def synchronize_clock(
    rate,
    program: Sequence[int],
    disturbances: Iterable[tuple[int, int]],
    gamma=CLOCK_GAMMA,
) -> ClockAdjustment:
    """Adjust a plant clock from observed resets along its program path.

    Each disturbance is (expected next address, address actually imposed).
    Landing earlier on the program means the plant ran ahead (slow it down),
    landing later means it lagged (speed it up); landing off the program
    leaves the clock alone and asks the controller to replan.
    """
    rate = Fraction(rate)
    gamma = Fraction(gamma)
    position = {a: k for k, a in enumerate(program)}
    events = []
    for expected, actual in disturbances:
        if actual not in position or expected not in position:
            events.append(("replan", expected, actual))
        elif position[actual] < position[expected]:
            rate *= 1 - gamma
            events.append(("slower", expected, actual))
        elif position[actual] > position[expected]:
            rate *= 1 + gamma
            events.append(("faster", expected, actual))
    return ClockAdjustment(rate, events)
