"""Turn a parsed scenario into runtime objects (space, plant, repository, channels)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channels import ChannelSet
from ..configspace import ConfigPoint, ConfigSpace, Constraint, Dimension, LegalityMap
from ..errors import CapacityError, OmegaSimError, ScenarioError
from ..plant import TABLE_CAP, ArrayPlant, Plant, SubPlant, build_corrective_field, trajectory
from ..storage import Repository
from .dsl import DimSpec, Scenario

ENV_PREFIX = "env."


def _dimension(spec: DimSpec, name: str) -> Dimension:
    if spec.kind == "boolean":
        return Dimension.boolean(name)
    if spec.kind == "int":
        return Dimension.integer(name, *spec.args)
    return Dimension.real(name, spec.args[0], spec.args[1], spec.args[2])


def _dimensions(sc: Scenario) -> list[Dimension]:
    out = []
    for spec in sc.dims:
        if spec.count is None:
            out.append(_dimension(spec, spec.name))
        else:
            out.extend(_dimension(spec, f"{spec.name}[{k}]") for k in range(spec.count))
    return out


@dataclass
class World:
    scenario: Scenario
    space: ConfigSpace  # plant configuration space with its legality
    env_space: ConfigSpace | None  # environment state dimensions, if declared
    plant: Plant | ArrayPlant
    repo: Repository
    modes: dict  # pattern address -> mode label ("-" for none)
    channels: ChannelSet
    address_modes: dict  # plant address -> mode label (tabulated plants only)
    pattern_index: dict  # pattern bits -> address

    @property
    def width(self) -> int:
        return self.space.total_width

    def pattern_point(self, address: int) -> ConfigPoint:
        return self.space.decode(self.repo.retrieve(address).bits)

    def mode_of(self, point: ConfigPoint) -> str:
        a = self.pattern_index.get(point.bits)
        if a is not None and self.modes.get(a, "-") != "-":
            return self.modes[a]
        if self.address_modes:
            return self.address_modes.get(point.index, "-")
        return "-"

    def mode_patterns(self, mode: str) -> list[int]:
        return sorted(a for a, m in self.modes.items() if m == mode)


def _legality(sc: Scenario, space_names: set[str], plant_dims: list[Dimension]) -> LegalityMap:
    probe = ConfigSpace(tuple(plant_dims))
    width = probe.total_width

    def decode_all(rows, what):
        out = set()
        for (bits,) in rows:
            if len(bits) != width:
                raise ScenarioError(f"{what} entry {bits} has {len(bits)} bits, plant space has {width}")
            try:
                out.add(probe.decode(bits).values)
            except OmegaSimError as exc:
                raise ScenarioError(f"{what} entry {bits}: {exc}") from None
        return frozenset(out)

    cons = tuple(Constraint(d, lo, hi) for d, lo, hi in sc.table("LEGAL", "constraint") if d in space_names)
    return LegalityMap(
        cons,
        decode_all(sc.table("LEGAL", "blacklist"), "blacklist"),
        decode_all(sc.table("LEGAL", "whitelist"), "whitelist"),
        sc.get("LEGAL", "whitelist_mode"),
    )


def _plant(sc: Scenario, space: ConfigSpace) -> Plant | ArrayPlant:
    kind = sc.get("PLANT", "kind")
    rate = sc.get("PLANT", "clock_rate")
    if space.size > TABLE_CAP:
        homogeneous = len(sc.dims) == 1 and sc.dims[0].count is not None
        if kind != "static" or not homogeneous:
            raise ScenarioError(
                f"plant space has {space.size} addresses; above {TABLE_CAP} only a static array "
                "(one 'name[N] = ...' dimension) is supported"
            )
        plant = ArrayPlant.static(space.dimensions[0], len(space), sc.dims[0].name)
        plant.space = space
        plant.clock_rate = rate
        return plant
    n = space.size
    succ = list(range(n))
    if kind == "table":
        for a, b in sc.table("PLANT", "successors"):
            if not (0 <= a < n and 0 <= b < n):
                raise ScenarioError(f"successor entry {a} {b} outside 0..{n - 1}")
            succ[a] = b
    program = sc.get("PLANT", "program")
    if any(not 0 <= a < n for a in program):
        raise ScenarioError(f"program address outside 0..{n - 1}")
    radius = sc.get("PLANT", "field_radius")
    field = build_corrective_field(space, program, radius) if program and radius > 0 else {}
    return Plant(
        space,
        [SubPlant(s) for s in succ],
        clock_rate=rate,
        corrective_field=field,
        program=program,
        policy=sc.get("PLANT", "policy"),
        seed=sc.get("RUN", "seed"),
    )


def build_world(sc: Scenario) -> World:
    dims = _dimensions(sc)
    plant_dims = [d for d in dims if not d.name.startswith(ENV_PREFIX)]
    env_dims = [d for d in dims if d.name.startswith(ENV_PREFIX)]
    if not plant_dims:
        raise ScenarioError("no plant dimensions (all are environment state)")
    names = {d.name for d in plant_dims}
    space = ConfigSpace(tuple(plant_dims), _legality(sc, names, plant_dims), name="plant")
    env_space = None
    if env_dims:
        env_names = {d.name for d in env_dims}
        cons = tuple(Constraint(d, lo, hi) for d, lo, hi in sc.table("LEGAL", "constraint") if d in env_names)
        env_space = ConfigSpace(tuple(env_dims), LegalityMap(cons), name="environment")

    try:
        plant = _plant(sc, space)
    except (CapacityError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"plant: {exc}") from None

    width = space.total_width
    rows = sc.table("STORAGE", "patterns")
    modes: dict = {}
    if sc.get("STORAGE", "generate"):
        try:
            repo = Repository.generate(sc.get("STORAGE", "generate"), width, sc.get("STORAGE", "seed"))
        except OmegaSimError as exc:
            raise ScenarioError(f"storage: {exc}") from None
        modes = {a: "-" for a in repo.addresses}
    else:
        for bits, _ in rows:
            if len(bits) != width:
                raise ScenarioError(f"pattern {bits} has {len(bits)} bits, plant space has {width}")
            if not space.is_valid_code(int(bits, 2)):
                raise ScenarioError(f"pattern {bits} is not a valid configuration")
        repo = Repository.from_patterns([b for b, _ in rows])
        modes = {k: m for k, (_, m) in enumerate(rows)}
    for sig, addr in sc.table("STORAGE", "triggers"):
        if addr not in repo:
            raise ScenarioError(f"trigger {sig} points at missing pattern {addr}")
    repo = Repository(repo.patterns, repo.access_counts, repo.assembly_rules,
                      {sig: addr for sig, addr in sc.table("STORAGE", "triggers")}, repo.aspect)
    pattern_index: dict = {}
    for a in repo.addresses:
        pattern_index.setdefault(repo.patterns[a].bits, a)

    address_modes: dict = {}
    if isinstance(plant, Plant):
        succ = plant.successor_map()
        for a in sorted(modes):
            if modes[a] == "-":
                continue
            start = space.decode(repo.patterns[a].bits).index
            for x in trajectory(succ, start):
                address_modes.setdefault(x, modes[a])

    init_bits = sc.get("PLANT", "initial_bits")
    if init_bits:
        if len(init_bits) != width or set(init_bits) - {"0", "1"}:
            raise ScenarioError(f"initial_bits must be {width} binary digits")
        start = space.decode(init_bits)
    elif sc.get("PLANT", "initial_pattern") in repo:
        start = space.decode(repo.patterns[sc.get("PLANT", "initial_pattern")].bits)
    else:
        start = space.zero()
    plant.implement(start)

    c = sc
    channels = ChannelSet(
        c.get("CHANNELS", "q"), c.get("CHANNELS", "r"), c.get("CHANNELS", "n"), c.get("CHANNELS", "m"),
        ber={"n": c.get("CHANNELS", "ber")}, duplex=c.get("CHANNELS", "duplex"),
    )
    return World(sc, space, env_space, plant, repo, modes, channels, address_modes, pattern_index)


def hybrid_masks(world: World, cap: int) -> tuple[ConfigSpace, np.ndarray, np.ndarray]:
    """Codes of the plant x environment space and their legality (plant dims most significant)."""
    env = world.env_space
    hybrid = ConfigSpace(world.space.dimensions + env.dimensions, name="hybrid")
    hybrid.require_enumerable(cap, "hybrid hazard key")
    pc = world.space.codes(cap)
    ec = env.codes(cap)
    p_ok = world.space.legal_mask(pc)
    e_ok = env.legal_mask(ec)
    w = env.total_width
    codes = (pc[:, None] << w | ec[None, :]).ravel()
    ok = (p_ok[:, None] & e_ok[None, :]).ravel()
    order = np.argsort(codes)
    return hybrid, codes[order], ok[order]
