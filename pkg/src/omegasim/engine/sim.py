"""Deterministic tick loop: environment, monitoring, planning, transfer, plant."""

from __future__ import annotations

import io
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from ..channels import CHECK_BITS, frame, surprise_rate, ticks_for, transmit_with_errors
from ..configspace import ConfigPoint, bit_distance, bits_for
from ..controller import (
    SPONTANEOUS,
    CostField,
    DamageModel,
    Lookahead,
    damage_table,
    eligible_strategies,
    make_strategy,
    plan_deterministic,
    select_strategy,
    step_bits,
    synchronize_clock,
)
from ..errors import (
    NoEligibleStrategyError,
    OmegaSimError,
    PreconditionError,
    RunAbortedError,
    ScenarioError,
    UnrecoverableTransferError,
)
from ..plant import Jump, Plant, ReliabilityParams, reliability, trajectory
from ..storage import Delta, apply_delta, delta_encode
from .dsl import Scenario
from .world import World, build_world

log = logging.getLogger(__name__)

TRACE_HEADER = "tick,real_time,virtual_time,active_config,channel,bits,event,damage"
LEDGER_HEADER = "tick,channel,bits_sent,bits_redundancy,bits_rerequested,job_id"
SUMMARY_KEYS = ("total_damage", "reconf_wall_ticks", "R", "h_k", "h_kp", "S", "mode_switches", "erratic")
ITERATIVE_CAP = 2**12  # largest space the iterative planner searches


def g9(x) -> str:
    return format(float(x), ".9g")


def stream_split(frames: tuple[int, ...], rerequested: int, x: int) -> tuple[int, int, int]:
    """(payload, check, re-requested) bits among the first ``x`` bits of a framed stream.

    ``frames`` are the first-pass frame lengths, each ending in its check bits;
    re-sent frames follow the first pass.  Without framing pass ``()``.
    """
    if not frames:
        return x, 0, 0
    first = sum(frames)
    y, pay, red = min(x, first), 0, 0
    for n in frames:
        if y <= 0:
            break
        take = min(y, n)
        pay += min(take, n - CHECK_BITS)
        red += max(0, take - (n - CHECK_BITS))
        y -= take
    return pay, red, max(0, min(x - first, rerequested))


def round9(x):
    """Float rounded to 9 significant digits for JSON output."""
    if x is None or isinstance(x, (bool, int)):
        return x
    return float(format(float(x), ".9g"))


@dataclass
class TickRecord:
    tick: int
    virtual_time: int
    active_code: int
    mode: str
    usage: dict  # channel -> bits moved this tick
    events: list
    damage: float
    frozen: bool
    ledger: list = field(default_factory=list)  # (channel, sent, redundancy, re-requested, job id)


@dataclass
class Episode:
    start: int
    cause: str  # "excitation" or "q-report"
    kind: str = "normal"  # or "recovery"
    target: int | None = None  # target plant code
    strategy: str = ""
    phases: dict = field(default_factory=dict)  # phase name -> ticks
    end: int | None = None
    frozen_ticks: int = 0

    @property
    def wall_ticks(self) -> int | None:
        return None if self.end is None else self.end - self.start + 1


@dataclass
class Switch:
    tick: int
    from_mode: str
    to_mode: str
    distance: int  # bits between departure config and mode entry
    best: int  # smallest distance available from the departing mode's cycle

    @property
    def excess(self) -> int:
        return self.distance - self.best


@dataclass
class RunSummary:
    total_damage: float
    reconf_wall_ticks: int
    R: float
    h_k: int | None
    h_kp: int | None
    S: float | None
    mode_switches: int
    erratic: bool

    def to_json(self) -> dict:
        return {k: round9(getattr(self, k)) for k in SUMMARY_KEYS}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"


@dataclass
class Trace:
    records: list[TickRecord]
    episodes: list[Episode]
    switches: list[Switch]
    width: int
    tick_seconds: float
    erratic_window: int
    erratic_threshold: int
    recovery_events: list[int]
    s_rate: float
    a_rate: float
    conserved: bool  # every n transfer satisfied sent = payload + redundancy + re-requests

    def rows(self) -> list[list[str]]:
        hexw = max(1, (self.width + 3) // 4)
        out = []
        for r in self.records:
            cfg = format(r.active_code, f"0{hexw}x")
            chans = [(c, b) for c, b in r.usage.items() if b > 0] or [("-", 0)]
            for k, (c, b) in enumerate(chans):
                out.append([
                    str(r.tick),
                    g9(r.tick * self.tick_seconds),
                    str(r.virtual_time),
                    cfg,
                    c,
                    str(b),
                    ";".join(r.events) if k == 0 else "",
                    g9(r.damage) if k == 0 else "",
                ])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRACE_HEADER + "\n")
        for row in self.rows():
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def ledger_csv(self) -> str:
        """Per-tick channel ledger: one row per channel that moved bits."""
        buf = io.StringIO()
        buf.write(LEDGER_HEADER + "\n")
        for r in self.records:
            for ch, sent, red, rereq, job in r.ledger:
                buf.write(f"{r.tick},{ch},{sent},{red},{rereq},{job}\n")
        return buf.getvalue()


@dataclass
class RunResult:
    trace: Trace
    summary: RunSummary

    @property
    def s(self) -> float:
        return self.trace.s_rate

    @property
    def a(self) -> float:
        return self.trace.a_rate


@dataclass
class _Phase:
    name: str  # identify | select | wait | transfer | gap
    ticks: int | None = None  # None: computed when the phase starts
    plan: dict = field(default_factory=dict)  # channel -> bits for the whole phase
    target: ConfigPoint | None = None
    last: bool = False
    done: int = 0  # ticks consumed
    sent: dict = field(default_factory=dict)
    started: bool = False
    job: str = ""
    framing: tuple = ((), 0)  # n-channel frame lengths and re-requested bits


@dataclass
class _Event:
    kind: str
    args: tuple


class Engine:
    """One run of one scenario; strictly single-threaded and deterministic."""

    def __init__(self, scenario: Scenario, seed: int | None = None, world: World | None = None):
        self.sc = scenario
        self.seed = scenario.get("RUN", "seed") if seed is None else seed
        self.world = world or build_world(scenario)
        w = self.world
        self.plant = w.plant
        self.space = w.space
        ctrl = lambda k: scenario.get("CONTROLLER", k)  # noqa: E731
        self.id_bits = bits_for(ctrl("error_classes"))
        self.strategy = ctrl("strategy")
        self.payload = ctrl("payload")
        self.step_budget = ctrl("step_budget")
        self.cap = ctrl("damage_cap")
        self.recovery = ctrl("recovery")
        if self.recovery >= 0 and self.recovery not in w.repo:
            raise ScenarioError(f"recovery pattern {self.recovery} is not stored")
        self.switching = ctrl("switching")
        self.gap = ctrl("gap")
        self.gamma = Fraction(repr(ctrl("gamma")))
        self.window = ctrl("erratic_window")
        self.threshold = ctrl("erratic_threshold")
        env = lambda k: scenario.get("ENVIRONMENT", k)  # noqa: E731
        self.w_demand = env("damage_demand")
        self.w_illegal = env("damage_illegal")
        self.events: dict[int, list[_Event]] = {}
        for row in scenario.table("ENVIRONMENT", "events"):
            self.events.setdefault(row[0], []).append(_Event(row[1], tuple(row[2:])))
        self._check_events()
        self.observed = {t: s for t, s in scenario.table("ENVIRONMENT", "observed")}
        self.predicted = {t: s for t, s in scenario.table("ENVIRONMENT", "predicted")}
        self.parity = scenario.get("CHANNELS", "parity")
        self.ticks = scenario.get("RUN", "ticks")
        self.tick_seconds = scenario.get("RUN", "tick_seconds")
        self.demand = self._parse_demand(env("initial_demand"), "initial_demand")
        self.repo = w.repo
        self.vt = 0
        self.episode: Episode | None = None
        self.queue: deque[_Phase] = deque()
        self.episodes: list[Episode] = []
        self.switches: list[Switch] = []
        self.records: list[TickRecord] = []
        self.starts: list[int] = []
        self.recovery_events: list[int] = []
        self.damped_until = -1
        self.excited = False
        self.erratic = False
        self.transfers = 0
        self.jobs = 0
        self.conserved = True
        self.shadow = self.plant.copy()  # undisturbed twin for the plant-to-environment rate
        self.out_pred: list[int] = []
        self.out_obs: list[int] = []

    # scenario plumbing -------------------------------------------------------

    def _check_events(self):
        tabulated = isinstance(self.plant, Plant)
        for t, evs in self.events.items():
            for ev in evs:
                need = {"demand": 1, "fault": 1, "disturb": 1, "jump": 1, "store": (1, 2), "none": 0}[ev.kind]
                n = len(ev.args)
                if (n not in need) if isinstance(need, tuple) else n != need:
                    raise ScenarioError(f"event {ev.kind} at tick {t} takes {need} argument(s), got {n}")
                if ev.kind in ("disturb", "jump") and not tabulated:
                    raise ScenarioError(f"event {ev.kind} at tick {t} needs a tabulated plant")
                try:
                    if ev.kind in ("fault", "disturb", "jump"):
                        int(ev.args[0])
                    if ev.kind == "demand":
                        self._parse_demand(ev.args[0], f"event at tick {t}")
                except ValueError:
                    raise ScenarioError(f"event {ev.kind} at tick {t}: bad argument {ev.args[0]!r}") from None

    def _parse_demand(self, text: str, where: str):
        if text == "none":
            return None
        if text.startswith("mode:"):
            mode = text[5:]
            if not self.world.mode_patterns(mode):
                raise ScenarioError(f"{where}: no stored pattern has mode {mode!r}")
            return ("mode", mode)
        addr = int(text)
        if addr not in self.world.repo:
            raise ScenarioError(f"{where}: no stored pattern at address {addr}")
        return ("pattern", addr)

    # demand and damage ----------------------------------------------------

    def _satisfied(self, point: ConfigPoint) -> bool:
        if self.demand is None:
            return True
        kind, v = self.demand
        if kind == "mode":
            return self.world.mode_of(point) == v
        return point.bits == self.repo.retrieve(v).bits

    def _damage(self, point: ConfigPoint) -> float:
        d = 0.0
        if not self._satisfied(point):
            d += self.w_demand
        v = self.space.violations(point)
        if v:
            d += self.w_illegal * v
        return d

    def _target(self) -> ConfigPoint:
        kind, v = self.demand
        if kind == "mode":
            v = self.world.mode_patterns(v)[0]
        if self.strategy == "memory" and self.repo.triggers:
            sig = format(self._class_id(), f"0{max(1, self.id_bits)}b")
            v = self.repo.triggers.get(sig, v)
        return self.world.pattern_point(v)

    def _class_id(self) -> int:
        kind, v = self.demand
        return v if kind == "pattern" else self.world.mode_patterns(v)[0]

    # events -------------------------------------------------------------------

    def _apply_events(self, t: int, labels: list[str]):
        for ev in self.events.get(t, ()):
            if ev.kind == "none":
                continue
            if ev.kind == "demand":
                self.demand = self._parse_demand(ev.args[0], f"event at tick {t}")
                self.excited = True
                labels.append(f"demand:{ev.args[0]}")
            elif ev.kind == "fault":
                self.demand = ("pattern", int(ev.args[0]))
                if int(ev.args[0]) not in self.repo:
                    raise RunAbortedError(f"tick {t}: fault class {ev.args[0]} has no remedy pattern")
                self.excited = True
                labels.append(f"fault:{ev.args[0]}")
            elif ev.kind == "store":
                mode = ev.args[1] if len(ev.args) > 1 else "-"
                bits = ev.args[0]
                if len(bits) != self.world.width:
                    raise RunAbortedError(f"tick {t}: stored pattern has the wrong width")
                self.repo = self.repo.with_pattern(bits)
                addr = max(self.repo.addresses)
                self.world.modes[addr] = mode
                self.world.pattern_index.setdefault(bits, addr)
                self.excited = True
                labels.append(f"store:{addr}")
            else:
                before = self.plant.active
                arg = int(ev.args[0])
                dist = Jump(arg) if ev.kind == "jump" else arg
                try:
                    self.plant.active = self.plant.apply_disturbance(before, dist)
                except OmegaSimError as exc:
                    raise RunAbortedError(f"tick {t}: {exc}") from exc
                labels.append(f"{ev.kind}:{arg}")
                if self.plant.program:
                    adj = synchronize_clock(self.plant.clock_rate, self.plant.program, [(before, self.plant.active)], self.gamma)
                    self.plant.clock_rate = adj.rate
                    labels.extend(f"clock_{k}" if k != "replan" else "replan" for k, _, _ in adj.events)

    # controller -------------------------------------------------------------

    def _start_episode(self, t: int, labels: list[str]):
        cause = "excitation" if self.excited else "q-report"
        self.excited = False
        self.starts.append(t)
        recent = [s for s in self.starts if s > t - self.window]
        ep = Episode(t, cause)
        self.episode = ep
        if len(recent) > self.threshold:
            self.erratic = True
            self.damped_until = t + self.window
            labels.append("erratic")
            if self.recovery >= 0:
                self._queue_recovery(labels)
                return
        self.queue = deque([_Phase("identify", ticks_for(self.id_bits, self.world.channels.q), {"q": self.id_bits})])
        labels.append(f"monitor:{cause}")

    def _queue_recovery(self, labels: list[str]):
        ep = self.episode
        ep.kind = "recovery"
        ep.strategy = "recovery"
        target = self.world.pattern_point(self.recovery)
        ep.target = target.code
        self.recovery_events.append(ep.start)
        self.queue = deque([_Phase("transfer", target=target, last=True)])
        labels.append("recovery")

    def _effective(self):
        ch = self.world.channels
        return ch.replace(m=min(ch.n, ch.m))

    def _plan(self, t: int, labels: list[str]):
        ep = self.episode
        start = self.plant.point
        target = self._target()
        ep.target = target.code
        chans = self._effective()
        cands = [make_strategy("spontaneous", start, [target], chans, SPONTANEOUS, mode=self.payload)]
        if self.strategy == "iterative" and self.space.size <= ITERATIVE_CAP and start != target:
            try:
                field_ = CostField.default(self.space, target)
                it = plan_deterministic(start, target, field_, self.step_budget, chans, id="iterative")
                if it.status == "goal" and it.steps:
                    cands.append(make_strategy("iterative", start, it.path, chans, it.family, mode="delta", gap=self.gap))
            except PreconditionError:
                pass

        def d(_tick, st):
            return self._damage(st.config)

        model = DamageModel(d, self.cap)
        damages = damage_table(cands, model, Lookahead(start, chans))
        elig = eligible_strategies(cands, model, damages=damages)
        try:
            chosen = select_strategy(elig)
        except NoEligibleStrategyError:
            labels.append(f"no_eligible|candidates={len(cands)}")
            if self.recovery < 0:
                raise RunAbortedError(f"tick {t}: no strategy satisfies the damage cap and no recovery pattern is set")
            self._queue_recovery(labels)
            return
        ep.strategy = chosen.id
        labels.append(f"plan:{chosen.id}|candidates={len(cands)}|eligible={len(elig)}"
                      f"|damage={g9(damages[chosen.id])}|cost={g9(chosen.cost)}|t_reconf={chosen.t_reconf}")
        phases = [_Phase("select", ticks_for(self.repo.address_bits, self.world.channels.r), {"r": self.repo.address_bits})]
        if self.switching == "scheduled" and self._is_switch(start, target):
            phases.append(_Phase("wait"))
        steps = chosen.steps
        for k, s in enumerate(steps):
            if k:
                phases.append(_Phase("gap", self.gap))
            phases.append(_Phase("transfer", target=s.target, last=k == len(steps) - 1))
        self.queue.extend(phases)

    def _is_switch(self, start: ConfigPoint, target: ConfigPoint) -> bool:
        return self.world.mode_of(start) != self.world.mode_of(target)

    def _cycle_best(self, target: ConfigPoint) -> int:
        if not isinstance(self.plant, Plant):
            return bit_distance(self.plant.point, target)
        succ = self.plant.successor_map()
        return min(bit_distance(self.space.point_from_index(a), target) for a in trajectory(succ, self.plant.active))

    def _best_departure(self, target: ConfigPoint) -> int:
        """Ticks to wait until the running plant sits closest to ``target``."""
        if not isinstance(self.plant, Plant):
            return 0
        twin = self.plant.copy()
        horizon = 2 * self.space.size
        best, best_d = 0, bit_distance(twin.point, target)
        for w in range(1, horizon + 1):
            for _ in range(twin.steps_due()):
                twin.step()
            dd = bit_distance(twin.point, target)
            if dd < best_d:
                best, best_d = w, dd
        return best

    def _start_phase(self, t: int, ph: _Phase, labels: list[str]):
        ph.started = True
        if ph.name == "plan":
            self.queue.popleft()
            self._plan(t, labels)
            self.queue.appendleft(ph)
            return
        if ph.name == "wait":
            ph.ticks = self._best_departure(self.space.point_from_code(self.episode.target))
        elif ph.name == "transfer":
            start = self.plant.point
            target = ph.target
            if self._is_switch(start, target):
                sw = Switch(t, self.world.mode_of(start), self.world.mode_of(target),
                            bit_distance(start, target), self._cycle_best(target))
                self.switches.append(sw)
                labels.append(f"switch:{sw.from_mode}>{sw.to_mode}")
            mode = "full" if self.episode.kind == "recovery" else self.payload
            if self.episode.strategy == "iterative":
                mode = "delta"
            bits = step_bits(start, target, mode)
            n_bits = bits
            if self.parity and bits:
                ph.target = self._send(start, target, mode)
                n_bits = self._last_rep.sent_bits
                ph.framing = (self._last_frames, self._last_rep.rerequested_bits)
            ph.plan = {"n": n_bits, "m": bits}
            ch = self.world.channels
            ph.ticks = max(ticks_for(n_bits, ch.n), ticks_for(bits, ch.m))
        self.jobs += 1
        ph.job = f"e{len(self.episodes)}.{self.jobs}.{ph.name}"
        labels.append(ph.name)

    def _send(self, start: ConfigPoint, target: ConfigPoint, mode: str) -> ConfigPoint:
        """Push the payload through the framed n channel; return what arrives."""
        if mode == "full":
            payload = target.bits
        else:
            dl = delta_encode(start.bits, target.bits)
            pw = dl.position_width
            payload = "".join(format(p, f"0{pw}b") + v for p, v in zip(dl.changed_positions, dl.changed_values))
        seed = (self.seed * 1_000_003 + self.transfers) % 2**63
        self.transfers += 1
        try:
            rep = transmit_with_errors(payload, self.world.channels, seed=seed, channel="n")
        except UnrecoverableTransferError as exc:
            raise RunAbortedError(f"unrecoverable transfer: {exc}") from exc
        self.conserved &= rep.conserved
        self._last_rep = rep
        self._last_frames = tuple(len(f) for f in frame(payload))
        if rep.exact:
            return target
        got = rep.received
        if mode == "full":
            bits = got
        else:
            n = len(start.bits)
            pw = dl.position_width
            pos, vals = [], []
            for k in range(0, len(got), pw + 1):
                p = int(got[k : k + pw], 2)
                if p < n:
                    pos.append(p)
                    vals.append(got[k + pw])
            bits = apply_delta(Delta(0, n, tuple(pos), tuple(vals)), start.bits)
        code = int(bits, 2)
        if not self.space.is_valid_code(code):
            return start
        return self.space.point_from_code(code)

    def _complete(self, t: int, ph: _Phase, labels: list[str]):
        ep = self.episode
        if ph.name != "plan":
            ep.phases[ph.name] = ep.phases.get(ph.name, 0) + ph.done
        if ph.name == "identify":
            self.queue.appendleft(_Phase("plan", 0))
        elif ph.name == "transfer":
            self.plant.implement(ph.target)
            self.shadow.implement(ph.target)  # a deployed configuration is expected behaviour
            labels.append("implement")
            if ph.last:
                ep.end = t
                self.episodes.append(ep)
                self.episode = None
                self.queue.clear()

    def _drain(self, t: int, labels: list[str]):
        """Complete every zero-length phase at the head of the queue."""
        while self.episode is not None and self.queue:
            ph = self.queue[0]
            if not ph.started:
                self._start_phase(t, ph, labels)
            if ph.done < ph.ticks:
                return
            self.queue.popleft()
            self._complete(t, ph, labels)

    def _controller(self, t: int, labels: list[str], usage: dict, ledger: list) -> bool:
        """Advance the reconfiguration machinery by one tick; True if the plant is frozen."""
        if self.episode is None:
            if t < self.damped_until or self._satisfied(self.plant.point):
                return False
            self._start_episode(t, labels)
        self._drain(t, labels)
        if self.episode is None:
            return False
        ph = self.queue[0]
        ph.done += 1
        for ch, total in ph.plan.items():
            rate = self.world.channels.rate(ch)
            upto = min(total, math.floor(ph.done * rate)) if ph.done < ph.ticks else total
            before = ph.sent.get(ch, 0)
            moved = upto - before
            ph.sent[ch] = upto
            if moved:
                usage[ch] = usage.get(ch, 0) + moved
                frames, rereq = ph.framing if ch == "n" else ((), 0)
                _, r0, q0 = stream_split(frames, rereq, before)
                _, r1, q1 = stream_split(frames, rereq, upto)
                ledger.append((ch, moved, r1 - r0, q1 - q0, ph.job))
        frozen = ph.name == "transfer"
        if frozen:
            self.episode.frozen_ticks += 1
        if ph.done >= ph.ticks:
            self.queue.popleft()
            self._complete(t, ph, labels)
        return frozen

    # main loop ------------------------------------------------------------

    def _tick(self, t: int):
        labels: list[str] = []
        usage = {c: 0 for c in ("q", "r", "n", "m")}
        self._apply_events(t, labels)
        ledger: list = []
        frozen = self._controller(t, labels, usage, ledger)
        symbol = self.observed.get(t)
        if not frozen:
            for _ in range(self.plant.steps_due()):
                _, out = self.plant.step(symbol)
                self.vt += 1
                _, expect = self.shadow.step(symbol)
                self.out_pred.append(0)
                self.out_obs.append(0 if expect == out else 1)
        point = self.plant.point
        damage = self._damage(point)
        self.records.append(TickRecord(t, self.vt, point.code, self.world.mode_of(point), usage, labels, damage, frozen, ledger))

    def run(self) -> RunResult:
        for t in range(self.ticks):
            self._tick(t)
        if self.episode is not None:
            log.info("run ended with an episode in progress (started at tick %d)", self.episode.start)
        ticks = sorted(set(self.observed) | set(self.predicted))
        obs = [self.observed.get(t, "-") for t in ticks]
        pred = [self.predicted.get(t, self.observed.get(t, "-")) for t in ticks]
        trace = Trace(
            self.records, self.episodes, self.switches, self.world.width, self.tick_seconds,
            self.window, self.threshold, self.recovery_events,
            surprise_rate(pred, obs), surprise_rate(self.out_pred, self.out_obs), self.conserved,
        )
        from .analysis import safety_report

        safety = safety_report(self.sc, trace, world=self.world)
        summary = RunSummary(
            total_damage=math.fsum(r.damage for r in self.records),
            reconf_wall_ticks=sum(e.wall_ticks for e in self.episodes),
            R=safety.R,
            h_k=safety.h_k,
            h_kp=safety.h_kp,
            S=safety.S,
            mode_switches=len(self.switches),
            erratic=self.erratic,
        )
        return RunResult(trace, summary)


def run(scenario: Scenario, seed: int | None = None) -> RunResult:
    """Run ``scenario`` for its declared ticks; identical inputs give identical traces."""
    return Engine(scenario, seed).run()


def reliability_of(world: World, epsilon: float) -> float:
    m = float(world.channels.m)
    return reliability(ReliabilityParams(epsilon, m, world.plant.psi_bits))
