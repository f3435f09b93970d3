"""Omega-units: storage, configurator and plant layers joined by channels.

Units are small executable models.  ``simulate_unit`` drives one through a
probe (a per-tick list of requests) and returns its trace indexed by virtual
time, which is what every decomposition and flattening is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import groupby
from typing import Any, Callable, Iterable, Mapping, Sequence

from .channels import ChannelSet, ticks_for
from .configspace import ConfigPoint, ConfigSpace, bits_for
from .errors import (
    CompatibilityError,
    ConflictError,
    ConsolidationError,
    ForbiddenCompositionError,
    ImpermissibleDecompositionError,
    PatternNotFoundError,
)
from .plant import DEGENERATE, ArrayPlant, Plant, SubPlant
from .storage import Repository, StoredPattern

STORAGE = "Φ"
CONTROLLER = "Θ"
PLANT = "Ψ"
LAYER_ORDER = {STORAGE: 0, CONTROLLER: 1, PLANT: 2}

CONFIGURABLE = "configurable"
SELF_IMPLEMENTING = "self-implementing"
SELF_MONITORING_IMPLEMENTING = "self-monitoring-implementing"
SELF_3 = "self-3-configurable"

ARGMIN_CAP = 2**16


@dataclass(frozen=True)
class CostTerm:
    """Goal-dependent cost over a set of dimensions: fn(goal, values) -> float."""

    scope: tuple[str, ...]
    fn: Callable[[Mapping[str, Any], Mapping[str, Any]], float]


@dataclass(frozen=True)
class Configurator:
    name: str = "theta"
    dims: tuple[str, ...] | None = None  # output dimensions it sets; None means all
    terms: tuple[CostTerm, ...] = ()
    address_bits: int | None = None
    replica_of: str | None = None

    def controls(self, space: ConfigSpace) -> tuple[str, ...]:
        return space.names if self.dims is None else self.dims


@dataclass(frozen=True)
class OmegaSignature:
    organization: tuple[str, ...]

    @property
    def layer_counts(self) -> tuple[int, int, int]:
        return tuple(self.organization.count(x) for x in (STORAGE, CONTROLLER, PLANT))

    @property
    def notation(self) -> str:
        runs = [str(len(list(g))) for _, g in groupby(self.organization)]
        return "Ω_" + "".join(runs)

    def __str__(self):
        return self.notation


def classify_capability(features: Iterable[str]) -> str:
    """Capability class from which functions run inside the unit.

    Features: 'implementing', 'monitoring', 'selecting'.
    """
    f = set(features)
    if "implementing" not in f:
        return CONFIGURABLE
    if "monitoring" in f and "selecting" in f:
        return SELF_3
    if "monitoring" in f:
        return SELF_MONITORING_IMPLEMENTING
    return SELF_IMPLEMENTING


@dataclass
class OmegaUnit:
    storages: list[Repository]
    controllers: list[Configurator]
    plants: list  # Plant | ArrayPlant
    channels: list[ChannelSet]
    organization: tuple[str, ...]
    space: ConfigSpace
    features: frozenset = frozenset({"implementing", "monitoring", "selecting"})
    name: str = "unit"

    @property
    def signature(self) -> OmegaSignature:
        return OmegaSignature(self.organization)

    @property
    def capability_class(self) -> str:
        return classify_capability(self.features)

    def copy(self) -> "OmegaUnit":
        return replace(self, plants=[p.copy() for p in self.plants], storages=list(self.storages),
                       controllers=list(self.controllers), channels=list(self.channels))

    def with_features(self, features: Iterable[str]) -> "OmegaUnit":
        return replace(self, features=frozenset(features))

    @property
    def values(self) -> dict[str, Any]:
        out = {}
        for p in self.plants:
            out.update(zip(p.space.names, p.values))
        return out


def _check_order(organization: Sequence[str]):
    if not organization:
        raise ForbiddenCompositionError("empty composition")
    for a, b in zip(organization, organization[1:]):
        if a == STORAGE and b == PLANT:
            raise ForbiddenCompositionError("storage cannot feed a plant without a configurator (Φ + Ψ)")
    if organization[-1] != PLANT:
        raise ForbiddenCompositionError("a unit must end in a plant layer")
    if CONTROLLER not in organization:
        raise ForbiddenCompositionError("a unit needs at least one configurator")


def _layer_kind(layer) -> str:
    if isinstance(layer, Repository):
        return STORAGE
    if isinstance(layer, Configurator):
        return CONTROLLER
    if isinstance(layer, (Plant, ArrayPlant)):
        return PLANT
    raise TypeError(f"not a layer: {type(layer).__name__}")


def compose(*layers, channels: ChannelSet | Sequence[ChannelSet] | None = None, name: str = "unit", space: ConfigSpace | None = None) -> OmegaUnit:
    """Join layers in the given order; order is part of the result's signature."""
    organization = tuple(_layer_kind(x) for x in layers)
    _check_order(organization)
    storages = [x for x in layers if isinstance(x, Repository)]
    controllers = [x for x in layers if isinstance(x, Configurator)]
    plants = [x for x in layers if _layer_kind(x) == PLANT]
    if space is None:
        dims = tuple(d for p in plants for d in p.space.dimensions)
        space = ConfigSpace(dims, name=name)
    plant_dims = {n for p in plants for n in p.space.names}
    for c in controllers:
        for n in c.controls(space):
            if n not in plant_dims:
                raise CompatibilityError(f"configurator {c.name!r} sets unknown dimension {n!r}")
        if c.address_bits is not None:
            for s in storages:
                if s.address_bits != c.address_bits:
                    raise CompatibilityError(
                        f"configurator {c.name!r} uses {c.address_bits}-bit addresses, storage needs {s.address_bits}"
                    )
    for s in storages:
        names = s.aspect if s.aspect is not None else space.names
        width = space.subspace(names).total_width
        for p in s.patterns.values():
            if len(p.bits) != width:
                raise CompatibilityError(f"pattern {p.address} has {len(p.bits)} bits, plant layer needs {width}")
    if channels is None:
        chans = [ChannelSet(1, 1, 1, 1)]
    elif isinstance(channels, ChannelSet):
        chans = [channels]
    else:
        chans = list(channels)
    return OmegaUnit(storages, controllers, plants, chans, organization, space, name=name)


# simulation ---------------------------------------------------------------------


def _deploy_values(unit: OmegaUnit, address: int) -> dict[str, Any]:
    found = False
    out: dict[str, Any] = {}
    for s in unit.storages:
        if address not in s:
            continue
        found = True
        names = s.aspect if s.aspect is not None else unit.space.names
        sub = unit.space.subspace(names)
        out.update(zip(sub.names, sub.decode(s.retrieve(address).bits).values))
    if not found:
        raise PatternNotFoundError(f"no storage holds address {address}")
    return out


def configurator_argmin(conf: Configurator, space: ConfigSpace, goal: Mapping[str, Any], current: Mapping[str, Any]) -> dict[str, Any]:
    """Exhaustive argmin of the configurator's terms over its own dimensions.

    Foreign dimensions are read from ``current``; ties go to the lowest index.
    """
    own = conf.controls(space)
    sub = space.subspace(own)
    sub.require_enumerable(ARGMIN_CAP, "configurator argmin")
    terms = [t for t in conf.terms if set(t.scope) & set(own)]
    best, best_cost = None, math.inf
    for p in sub.iter_points(ARGMIN_CAP):
        vals = dict(current)
        vals.update(zip(own, p.values))
        c = sum(t.fn(goal, vals) for t in terms)
        if c < best_cost:
            best, best_cost = p, c
    return dict(zip(own, best.values))


def _merge_outputs(unit: OmegaUnit, outs: list) -> Any:
    if all(isinstance(o, tuple) and len(o) == len(p.space) for o, p in zip(outs, unit.plants)):
        merged = {}
        for o, p in zip(outs, unit.plants):
            merged.update(zip(p.space.names, o))
        return tuple(merged[n] for n in unit.space.names)
    return tuple(outs)


def _implement(unit: OmegaUnit, target: Mapping[str, Any]):
    for p in unit.plants:
        if not any(n in target for n in p.space.names):
            continue
        cur = dict(zip(p.space.names, p.values))
        cur.update({n: target[n] for n in p.space.names if n in target})
        p.implement(tuple(cur[n] for n in p.space.names))


def unit_tick(unit: OmegaUnit, request=None, input=None) -> tuple[Any, tuple]:
    """Apply one request, then step every plant once; returns (output, values before the step)."""
    if request is not None:
        kind, arg = request
        if kind == "deploy":
            _implement(unit, _deploy_values(unit, arg))
        elif kind == "goal":
            current = unit.values
            target = {}
            for c in unit.controllers:
                if c.replica_of is not None:
                    continue
                target.update(configurator_argmin(c, unit.space, arg, current))
            _implement(unit, target)
        else:
            raise ValueError(f"unknown request {kind!r}")
    vals = unit.values
    before = tuple(vals[n] for n in unit.space.names)
    outs = [p.step(input)[1] for p in unit.plants]
    return _merge_outputs(unit, outs), before


def simulate_unit(unit: OmegaUnit, probe: Sequence, inputs: Sequence | None = None) -> list[tuple[int, Any, tuple]]:
    """Trace of (virtual tick, output, active values) on a copy of ``unit``."""
    work = unit.copy()
    trace = []
    for vt, req in enumerate(probe):
        x = inputs[vt] if inputs is not None else None
        out, vals = unit_tick(work, req, x)
        trace.append((vt, out, vals))
    return trace


def trace_equal(a: OmegaUnit, b: OmegaUnit, probe: Sequence, inputs: Sequence | None = None) -> bool:
    return simulate_unit(a, probe, inputs) == simulate_unit(b, probe, inputs)


# decomposition ------------------------------------------------------------------


@dataclass
class DecompositionReport:
    operation: str
    permissible: bool
    reason: str = ""
    trace_equal: bool | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "operation": self.operation,
            "permissible": self.permissible,
            "reason": self.reason,
            "trace_equal": self.trace_equal,
        }


def _reject(operation: str, reason: str, **details):
    raise ImpermissibleDecompositionError(DecompositionReport(operation, False, reason, None, details))


def _rebuild(unit: OmegaUnit, storages=None, controllers=None, plants=None, channels=None) -> OmegaUnit:
    storages = unit.storages if storages is None else storages
    controllers = unit.controllers if controllers is None else controllers
    plants = unit.plants if plants is None else plants
    org = []
    for layer, items in ((STORAGE, storages), (CONTROLLER, controllers), (PLANT, plants)):
        org += [layer] * len(items)
    return replace(
        unit,
        storages=list(storages),
        controllers=list(controllers),
        plants=list(plants),
        channels=list(channels if channels is not None else unit.channels),
        organization=tuple(org),
    )


def _finish(operation: str, original: OmegaUnit, result: OmegaUnit, probe, inputs, reason: str, **details):
    eq = None
    if probe is not None:
        eq = trace_equal(original, result, probe, inputs)
        if not eq:
            _reject(operation, "traces differ on the probe scenario", **details)
    return result, DecompositionReport(operation, True, reason, eq, details)


def dec_s(
    unit: OmegaUnit,
    partition: Sequence[Iterable[int]] | None = None,
    aspects: Sequence[Sequence[str]] | None = None,
    probe: Sequence | None = None,
    inputs: Sequence | None = None,
) -> tuple[OmegaUnit, DecompositionReport]:
    """Split the storage layer by pattern groups or by dimension aspects."""
    if len(unit.storages) != 1:
        raise CompatibilityError("dec_s expects a single storage layer")
    repo = unit.storages[0]
    if (partition is None) == (aspects is None):
        raise ValueError("give exactly one of partition or aspects")
    if partition is not None:
        groups = [sorted(set(g)) for g in partition]
        covered = set().union(*groups) if groups else set()
        lost = sorted(set(repo.addresses) - covered)
        if lost:
            _reject("dec_s", f"patterns lost by the partition: {lost}", lost=lost)
        unknown = sorted(covered - set(repo.addresses))
        if unknown:
            _reject("dec_s", f"partition names absent addresses: {unknown}")
        parts = [Repository({a: repo.patterns[a] for a in g}, aspect=repo.aspect) for g in groups]
    else:
        names = [n for g in aspects for n in g]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ConflictError(f"aspects overlap on {dup}", dup)
        missing = [n for n in unit.space.names if n not in names]
        if missing:
            _reject("dec_s", f"aspects drop dimensions {missing}", lost=missing)
        parts = []
        for g in aspects:
            ordered = tuple(n for n in unit.space.names if n in g)
            sub = unit.space.subspace(ordered)
            pats = {}
            for a, p in repo.patterns.items():
                full = unit.space.decode(p.bits)
                proj = sub.point([full[n] for n in ordered])
                pats[a] = StoredPattern(a, proj.bits, p.cluster, "fragment")
            parts.append(Repository(pats, aspect=ordered))
    result = _rebuild(unit, storages=parts)
    # every original address must still be retrievable with identical content
    for a, p in repo.patterns.items():
        got = _deploy_values(result, a)
        if tuple(got[n] for n in unit.space.names) != unit.space.decode(p.bits).values:
            _reject("dec_s", f"address {a} no longer reassembles to its pattern")
    return _finish("dec_s", unit, result, probe, inputs, "all patterns retrievable", parts=len(parts))


def dec_c(
    unit: OmegaUnit,
    partition: Sequence[Sequence[str]],
    goals: Sequence[Mapping[str, Any]] = (),
    probe: Sequence | None = None,
    inputs: Sequence | None = None,
) -> tuple[OmegaUnit, DecompositionReport]:
    """Split the configurator by output dimensions.

    Accepted only when, for every goal given and every current state, the
    parallel configurators choose exactly what the joint one chooses.
    """
    if len(unit.controllers) != 1:
        raise CompatibilityError("dec_c expects a single configurator")
    theta = unit.controllers[0]
    own = theta.controls(unit.space)
    groups = [tuple(n for n in own if n in set(g)) for g in partition]
    names = [n for g in groups for n in g]
    if len(groups) < 2 or any(set(g) == set(own) for g in groups) or len(set(names)) != len(names):
        report = DecompositionReport("replication", False, "overlapping or full-coverage groups replicate the configurator")
        raise ImpermissibleDecompositionError(report)
    if set(names) != set(own):
        _reject("dec_c", f"partition leaves dimensions uncontrolled: {sorted(set(own) - set(names))}")
    subs = [replace(theta, name=f"{theta.name}{k}", dims=g) for k, g in enumerate(groups)]
    unit.space.require_enumerable(ARGMIN_CAP, "dec_c check")
    goal_list = list(goals) + [r[1] for r in (probe or []) if r is not None and r[0] == "goal"]
    for goal in goal_list:
        for p in unit.space.iter_points(ARGMIN_CAP):
            current = dict(zip(unit.space.names, p.values))
            joint = configurator_argmin(theta, unit.space, goal, current)
            split: dict = {}
            for s in subs:
                split.update(configurator_argmin(s, unit.space, goal, current))
            if joint != split:
                _reject(
                    "dec_c",
                    f"entangled dimensions: goal {dict(goal)} from {p.values} gives {joint} jointly but {split} split",
                    witness=(dict(goal), p.values),
                )
    result = _rebuild(unit, controllers=subs)
    return _finish("dec_c", unit, result, probe, inputs, "controller outputs need no post-integration", groups=groups)


def _plant_factor(plant: Plant, names: Sequence[str]) -> tuple[Plant | None, list[int]]:
    """Fragment plant over ``names`` if the successor table factorises, else offending addresses."""
    space = plant.space
    sub = space.subspace(names)
    pos = [space.dim_index(n) for n in names]
    succ = plant.successor_map()
    image: dict[tuple, tuple] = {}
    offending = []
    for a in range(plant.size):
        vals = space.point_from_index(a).values
        key = tuple(vals[k] for k in pos)
        nxt = space.point_from_index(succ[a]).values
        proj = tuple(nxt[k] for k in pos)
        if image.setdefault(key, proj) != proj:
            offending.append(a)
    if offending:
        return None, offending
    table = [SubPlant(sub.point(image[sub.point_from_index(k).values]).index) for k in range(sub.size)]
    active_vals = plant.values
    frag = Plant(sub, table, sub.point([active_vals[k] for k in pos]).index, plant.clock_rate, policy=plant.policy)
    return frag, []


def dec_p(
    unit: OmegaUnit,
    fragments: Sequence[Sequence[str]],
    probe: Sequence | None = None,
    inputs: Sequence | None = None,
) -> tuple[OmegaUnit, DecompositionReport]:
    """Split the plant into independent fragments, each fed by its own m-channel replica."""
    if len(unit.plants) != 1:
        raise CompatibilityError("dec_p expects a single plant layer")
    plant = unit.plants[0]
    names = [n for g in fragments for n in g]
    if sorted(names) != sorted(plant.space.names) or len(set(names)) != len(names):
        _reject("dec_p", "fragments must partition the plant dimensions")
    m = unit.channels[0].rate("m")
    before = ticks_for(plant.space.total_width, m)
    parts = []
    if isinstance(plant, ArrayPlant):
        per_cell = len(plant.cell.space)
        for g in fragments:
            cells = sorted({plant.space.dim_index(n) // per_cell for n in g})
            cell_names = {plant.space.names[c * per_cell + j] for c in cells for j in range(per_cell)}
            if cell_names != set(g):
                _reject("dec_p", "array fragments must consist of whole cells")
            parts.append(plant.fragment(cells))
    else:
        if any(sp.output != DEGENERATE or sp.inner is not None or sp.alternates for sp in plant.table):
            _reject("dec_p", "plant outputs are not separable per fragment")
        offending: list[int] = []
        for g in fragments:
            ordered = [n for n in plant.space.names if n in set(g)]
            frag, bad = _plant_factor(plant, ordered)
            offending += bad
            parts.append(frag)
        if offending:
            offending = sorted(set(offending))
            _reject("dec_p", f"successors cross the fragment cut at addresses {offending}", offending=offending)
    after = max(ticks_for(p.space.total_width, m) for p in parts)
    chans = [unit.channels[0]] * len(parts)
    result = _rebuild(unit, plants=parts, channels=chans)
    return _finish(
        "dec_p", unit, result, probe, inputs, "fragments independent",
        transfer_before=before, transfer_after=after,
    )


def _aspect(repo: Repository, space: ConfigSpace) -> tuple[str, ...]:
    return repo.aspect if repo.aspect is not None else space.names


def dec_i(unit: OmegaUnit) -> list[OmegaUnit]:
    """Split a fully decomposed unit into independent units, one per plant fragment."""
    units = []
    claimed_s, claimed_c = set(), set()
    for k, p in enumerate(unit.plants):
        dims = set(p.space.names)
        stores = []
        for j, s in enumerate(unit.storages):
            asp = set(_aspect(s, unit.space))
            if asp & dims and not asp <= dims:
                _reject("dec_i", f"plant fragment {k} depends on storage {j} which also feeds other fragments")
            if asp <= dims:
                stores.append(s)
                claimed_s.add(j)
        ctrls = []
        for j, c in enumerate(unit.controllers):
            cd = set(c.controls(unit.space))
            if cd & dims and not cd <= dims:
                _reject("dec_i", f"configurator {c.name!r} spans several plant fragments")
            if cd <= dims:
                ctrls.append(c)
                claimed_c.add(j)
        if not ctrls:
            _reject("dec_i", f"plant fragment {k} has no configurator of its own")
        chans = [unit.channels[min(k, len(unit.channels) - 1)]]
        sub = ConfigSpace(tuple(d for d in unit.space.dimensions if d.name in dims), name=f"{unit.name}.{k}")
        units.append(
            OmegaUnit(stores, ctrls, [p], chans, (STORAGE,) * len(stores) + (CONTROLLER,) * len(ctrls) + (PLANT,),
                      sub, unit.features, f"{unit.name}.{k}")
        )
    if len(claimed_s) != len(unit.storages):
        _reject("dec_i", "some storage layer is not aligned with any plant fragment")
    return units


def join_units(units: Sequence[OmegaUnit], space: ConfigSpace | None = None, name: str = "unit") -> OmegaUnit:
    storages = [s for u in units for s in u.storages]
    controllers = [c for u in units for c in u.controllers]
    plants = [p for u in units for p in u.plants]
    channels = [c for u in units for c in u.channels]
    if space is None:
        space = ConfigSpace(tuple(d for u in units for d in u.space.dimensions), name=name)
    org = (STORAGE,) * len(storages) + (CONTROLLER,) * len(controllers) + (PLANT,) * len(plants)
    return OmegaUnit(storages, controllers, plants, channels, org, space, units[0].features, name)


def simulate_parallel(units: Sequence[OmegaUnit], space: ConfigSpace, probe: Sequence, inputs: Sequence | None = None):
    """Run disjoint units side by side and merge their traces into ``space`` order."""
    traces = []
    for u in units:
        sub_probe = []
        for req in probe:
            if req is None:
                sub_probe.append(None)
            elif req[0] == "deploy":
                held = any(req[1] in s for s in u.storages)
                sub_probe.append(req if held else None)
            else:
                sub_probe.append(req)
        traces.append(simulate_unit(u, sub_probe, inputs))
    merged = []
    for vt in range(len(probe)):
        vals, outs = {}, {}
        for u, tr in zip(units, traces):
            vals.update(zip(u.space.names, tr[vt][2]))
            outs.update(zip(u.space.names, tr[vt][1]))
        merged.append((vt, tuple(outs[n] for n in space.names), tuple(vals[n] for n in space.names)))
    return merged


# nesting --------------------------------------------------------------------------


@dataclass
class NestedUnit:
    """Outer unit whose plant hosts an inner unit; Φ1 is a function of Ψ0."""

    outer: OmegaUnit
    inner_plant: Plant
    hookup: Mapping[tuple, tuple]  # outer plant values -> inner plant values

    def copy(self) -> "NestedUnit":
        return NestedUnit(self.outer.copy(), self.inner_plant.copy(), self.hookup)


def t_a(pairs: Iterable[tuple[tuple, tuple]], outer_space: ConfigSpace) -> dict[tuple, tuple]:
    """Hook the inner storage onto the outer plant; the dependency must be a total function."""
    table: dict[tuple, tuple] = {}
    for k, v in pairs:
        k, v = tuple(k), tuple(v)
        if k in table and table[k] != v:
            raise ConsolidationError(f"outer configuration {k} maps to both {table[k]} and {v}")
        table[k] = v
    missing = [p.values for p in outer_space.iter_points() if p.values not in table]
    if missing:
        raise ConsolidationError(f"hookup undefined for outer configurations {missing[:4]}")
    return table


def t_b(nested: NestedUnit) -> OmegaUnit:
    """Unframe: expose the inner storage and configurator as layers of one five-layer unit."""
    outer = nested.outer
    images = sorted(set(nested.hookup.values()))
    inner_space = nested.inner_plant.space
    inner_repo = Repository.from_patterns([inner_space.point(v).bits for v in images], aspect=inner_space.names)
    theta1 = Configurator("theta1", inner_space.names)
    org = (STORAGE, CONTROLLER, STORAGE, CONTROLLER, PLANT)
    space = ConfigSpace(outer.space.dimensions + inner_space.dimensions, name=outer.name)
    return OmegaUnit(
        outer.storages + [inner_repo], outer.controllers + [theta1], outer.plants + [nested.inner_plant],
        outer.channels, org, space, outer.features, outer.name,
    )


@dataclass(frozen=True)
class _PairOutput:
    outer: Plant
    inner: Plant
    outer_addr: int
    inner_addr: int

    def __call__(self, input):
        return (self.outer.output_of(self.outer_addr, input), self.inner.output_of(self.inner_addr, input))


def t_c(nested: NestedUnit) -> OmegaUnit:
    """Consolidate into one Ω_111 unit over the product space.

    Storage: Φ0 ⊗ Φ1, each outer pattern joined with its hooked inner pattern.
    Plant: product automaton whose inner half is re-implemented whenever the
    hooked inner configuration changes, exactly as the nested unit refreshes it.
    """
    outer = nested.outer
    if len(outer.plants) != 1 or not isinstance(outer.plants[0], Plant):
        raise ConsolidationError("consolidation needs a single tabulated outer plant")
    p0, p1 = outer.plants[0], nested.inner_plant
    s0, s1 = p0.space, p1.space
    space = ConfigSpace(s0.dimensions + s1.dimensions, name=outer.name)
    h = nested.hookup
    succ0, succ1 = p0.successor_map(), p1.successor_map()
    table = []
    for a in range(space.size):
        x0, x1 = divmod(a, s1.size)
        v0 = s0.point_from_index(x0).values
        y0 = succ0[x0]
        w0 = s0.point_from_index(y0).values
        y1 = s1.point(h[w0]).index if h[w0] != h[v0] else succ1[x1]
        table.append(SubPlant(y0 * s1.size + y1, _PairOutput(p0, p1, x0, x1)))
    # the nested unit refreshes its inner plant before the first step
    active = p0.active * s1.size + s1.point(h[p0.values]).index
    plant = Plant(space, table, active, p0.clock_rate, policy=p0.policy)
    patterns = {}
    for s in outer.storages:
        for a, pat in s.patterns.items():
            v0 = s0.decode(pat.bits).values
            patterns[a] = StoredPattern(a, space.point(v0 + h[v0]).bits)
    repo = Repository(patterns)
    theta = Configurator("theta", None, outer.controllers[0].terms if outer.controllers else ())
    return compose(repo, theta, plant, channels=outer.channels, name=outer.name, space=space)


def flatten_nested(outer: OmegaUnit, inner_plant: Plant, hookup_pairs: Iterable[tuple[tuple, tuple]]):
    """t_a, t_b, t_c in sequence; returns (consolidated unit, five-layer intermediate)."""
    if len(outer.plants) != 1:
        raise ConsolidationError("outer unit must have one plant layer")
    hook = t_a(hookup_pairs, outer.plants[0].space)
    nested = NestedUnit(outer, inner_plant, hook)
    return t_c(nested), t_b(nested)


def simulate_nested(nested: NestedUnit, probe: Sequence, inputs: Sequence | None = None):
    """Nested execution: the inner plant is refreshed from the hookup on outer
    reconfiguration or whenever the hooked configuration changes."""
    work = nested.copy()
    outer = work.outer
    p0 = outer.plants[0]
    p1 = work.inner_plant
    last = None
    trace = []
    for vt, req in enumerate(probe):
        x = inputs[vt] if inputs is not None else None
        reconfigured = False
        if req is not None:
            kind, arg = req
            if kind != "deploy":
                raise ValueError("nested probes support deploy requests only")
            _implement(outer, _deploy_values(outer, arg))
            reconfigured = True
        want = work.hookup[p0.values]
        if reconfigured or want != last:
            p1.implement(want)
            last = want
        vals = p0.values + p1.values
        o0 = p0.output_of(p0.active, x)
        o1 = p1.output_of(p1.active, x)
        p0.active = p0.autonomous_successor(p0.active)
        p1.active = p1.autonomous_successor(p1.active)
        trace.append((vt, (o0, o1), vals))
    return trace
