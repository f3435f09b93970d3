"""Post-run and static analyses: safety, dwell-constrained reachability, behaviour."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..configspace import (
    DEFAULT_ENUMERATION_CAP,
    ConfigPoint,
    SafetyMetrics,
    detect_bridges_and_barriers,
    flip_masks,
    hazard_key,
    io_mapping_redundancy,
    min_cross_distance,
)
from ..errors import CapacityError, NoHazardError, ScenarioError
from ..plant import Plant, ReliabilityParams, reliability
from .dsl import Scenario
from .world import World, build_world, hybrid_masks

log = logging.getLogger(__name__)


# safety -------------------------------------------------------------------------


def _plant_key(world: World, cap: int) -> int | None:
    try:
        return hazard_key(world.space, cap=cap)
    except NoHazardError:
        return None
    except CapacityError:
        log.warning("plant space too large for an exhaustive hazard key; reporting none")
        return None


def _hybrid_key(world: World, cap: int) -> int | None:
    _, codes, ok = hybrid_masks(world, cap)
    if ok.all():
        return None
    return min_cross_distance(codes[ok], codes[~ok], world.space.total_width + world.env_space.total_width)


def safety_report(scenario: Scenario, trace=None, world: World | None = None,
                  cap: int = DEFAULT_ENUMERATION_CAP) -> SafetyMetrics:
    """h_k over the plant space, h_kp over plant x environment, R and S = h_kp * R.

    Without declared environment dimensions h_kp falls back to h_k.  An empty
    illegal set yields ``h_k = None`` (no hazard) and an undefined S.
    """
    world = world or build_world(scenario)
    R = reliability(ReliabilityParams(scenario.get("RUN", "epsilon"), float(world.channels.m), world.plant.psi_bits))
    h_k = _plant_key(world, cap)
    if world.env_space is None:
        h_kp = h_k
    else:
        try:
            h_kp = _hybrid_key(world, cap)
        except CapacityError:
            log.warning("hybrid space too large for an exhaustive hazard key; reporting none")
            h_kp = None
    return SafetyMetrics(h_k, h_kp, R)


def system_hazard_key(keys) -> int | None:
    """Key of a multi-behaviour system: the smallest per-behaviour key (None = no hazard)."""
    finite = [k for k in keys if k is not None]
    return min(finite) if finite else None


# reachability --------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetOutcome:
    budget: int
    reachable: bool
    steps: int | None
    wall_ticks: int | None
    path: tuple[str, ...]

    def to_json(self) -> dict:
        return {"budget": self.budget, "reachable": self.reachable, "steps": self.steps,
                "wall_ticks": self.wall_ticks, "path": list(self.path)}


def dwell_bfs(space, start: int, goal: int, budget: int, theta: int, cap: int = DEFAULT_ENUMERATION_CAP):
    """Shortest move sequence under a per-tick flip budget and an illegal-dwell limit.

    One move per tick flips 1..budget bits.  An excursion that leaves the legal
    set must re-enter it within ``theta`` ticks, counting the re-entry tick.
    State is (code, ticks spent outside so far).  Returns the code path or None.
    """
    codes = space.codes(cap)
    legal = dict(zip(codes.tolist(), space.legal_mask(codes).tolist()))
    if not legal.get(start) or not legal.get(goal):
        raise ValueError("start and goal must be legal points of the space")
    masks = flip_masks(space.total_width, budget).tolist()
    parent = {(start, 0): None}
    queue = deque([(start, 0)])
    while queue:
        code, k = queue.popleft()
        if code == goal:
            path, s = [], (code, k)
            while s is not None:
                path.append(s[0])
                s = parent[s]
            return path[::-1]
        for mk in masks:
            nb = code ^ mk
            ok = legal.get(nb)
            if ok is None:
                continue
            if ok:
                if k + 1 > theta and k > 0:
                    continue
                state = (nb, 0)
            else:
                if k + 2 > theta:
                    continue
                state = (nb, k + 1)
            if state not in parent:
                parent[state] = (code, k)
                queue.append(state)
    return None


def _bits_point(world: World, text: str, what: str) -> ConfigPoint:
    if not text:
        raise ScenarioError(f"RUN {what} is not declared")
    if len(text) != world.width or set(text) - {"0", "1"}:
        raise ScenarioError(f"RUN {what} must be {world.width} binary digits")
    return world.space.decode(text)


def reachability_experiment(scenario: Scenario, budgets=None, theta: int | None = None) -> list[BudgetOutcome]:
    """One row per budget (bits/tick): reachable, steps and wall ticks from start to goal."""
    world = build_world(scenario)
    start = _bits_point(world, scenario.get("RUN", "start"), "start")
    goal = _bits_point(world, scenario.get("RUN", "goal"), "goal")
    budgets = list(budgets if budgets is not None else scenario.get("RUN", "budgets")) or [world.width]
    theta = scenario.get("RUN", "theta") if theta is None else theta
    out = []
    for b in budgets:
        if b < 1:
            raise ScenarioError("budgets must be >= 1 bit per tick")
        path = dwell_bfs(world.space, start.code, goal.code, b, theta)
        if path is None:
            out.append(BudgetOutcome(b, False, None, None, ()))
        else:
            w = world.width
            out.append(BudgetOutcome(b, True, len(path) - 1, len(path) - 1, tuple(format(c, f"0{w}b") for c in path)))
    return out


def analyze(scenario: Scenario, budget: int | None = None, cap: int = DEFAULT_ENUMERATION_CAP) -> dict:
    """Static report: reachability (start to goal), hazard key and output redundancy."""
    world = build_world(scenario)
    report = {"reachable": None, "path": [], "min_budget": None, "hazard_key": None, "redundancy_groups": []}
    if scenario.get("RUN", "start") and scenario.get("RUN", "goal"):
        start = _bits_point(world, scenario.get("RUN", "start"), "start")
        goal = _bits_point(world, scenario.get("RUN", "goal"), "goal")
        rep = detect_bridges_and_barriers(world.space, start, goal, budget or world.width, cap)
        report.update(rep.to_json())
    report["hazard_key"] = _plant_key(world, cap)
    plant = world.plant
    if isinstance(plant, Plant):
        def out(p):
            return plant.output_of(p.index)

        red = io_mapping_redundancy(out, world.space, cap)
        report["redundancy_groups"] = [[list(v) for v in g] for g in red.groups]
    return report


# behaviour ---------------------------------------------------------------------


@dataclass
class BehaviorReport:
    segments: list[tuple[str, int, int]]  # (mode, first tick, last tick)
    episodes: int
    self_propelled: int
    excited: int
    switch_excess: list[int]
    reconfiguration_starts: list[int]
    peak_rate: int  # most starts inside one window
    erratic: bool
    recommend_recovery: bool

    def to_json(self) -> dict:
        return {
            "segments": [list(s) for s in self.segments],
            "episodes": self.episodes,
            "self_propelled": self.self_propelled,
            "excited": self.excited,
            "switch_excess": self.switch_excess,
            "peak_rate": self.peak_rate,
            "erratic": self.erratic,
            "recommend_recovery": self.recommend_recovery,
        }


def behavior_metrics(trace) -> BehaviorReport:
    """Mode segments, switch costs, self-propulsion and erratic-state detection."""
    segs: list[list] = []
    for r in trace.records:
        if segs and segs[-1][0] == r.mode:
            segs[-1][2] = r.tick
        else:
            segs.append([r.mode, r.tick, r.tick])
    starts = _starts(trace)  # includes an episode still running at the end
    w = trace.erratic_window
    arr = np.array(starts, dtype=np.int64)
    peak = 0
    for s in starts:
        peak = max(peak, int(np.count_nonzero((arr > s - w) & (arr <= s))))
    erratic = peak > trace.erratic_threshold
    return BehaviorReport(
        segments=[tuple(s) for s in segs],
        episodes=len(trace.episodes),
        self_propelled=sum(1 for e in trace.episodes if e.cause == "q-report"),
        excited=sum(1 for e in trace.episodes if e.cause == "excitation"),
        switch_excess=[s.excess for s in trace.switches],
        reconfiguration_starts=starts,
        peak_rate=peak,
        erratic=erratic,
        recommend_recovery=erratic,
    )


def _starts(trace) -> list[int]:
    return [r.tick for r in trace.records if any(ev.startswith("monitor:") or ev == "erratic" for ev in r.events)]
