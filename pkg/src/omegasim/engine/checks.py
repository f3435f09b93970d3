"""Built-in reproductions of the worked numeric examples shipped with the package."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

from ..omega import Configurator, compose, dec_p
from ..plant import ab_divergence_plant, selection_code
from .analysis import reachability_experiment
from .dsl import Scenario, parse_scenario
from .sim import Engine
from .world import build_world


@dataclass(frozen=True)
class Check:
    name: str
    expected: object
    observed: object

    @property
    def ok(self) -> bool:
        return self.expected == self.observed

    def to_json(self) -> dict:
        def enc(v):
            return str(v) if isinstance(v, Fraction) else v

        return {"name": self.name, "expected": enc(self.expected), "observed": enc(self.observed), "ok": self.ok}


def shipped(name: str) -> Scenario:
    text = resources.files("omegasim.scenarios").joinpath(f"{name}.scn").read_text(encoding="utf-8")
    return parse_scenario(text, name)


def shipped_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("omegasim.scenarios").iterdir() if p.name.endswith(".scn"))


CHECK_HORIZON = 1000  # ticks; long enough for a slowed channel to finish the episode


def fault_remedy_checks(sc: Scenario) -> list[Check]:
    eng = Engine(sc.with_value("RUN", "ticks", max(sc.get("RUN", "ticks"), CHECK_HORIZON)))
    res = eng.run()
    ep = res.trace.episodes[0] if res.trace.episodes else None
    ph = ep.phases if ep else {}
    return [
        Check("fault remedy: identification ticks", 3, ph.get("identify")),
        Check("fault remedy: selection ticks", 2, ph.get("select")),
        Check("fault remedy: transfer ticks", 16, ph.get("transfer")),
        Check("fault remedy: plant unresponsive ticks", 16, ep.frozen_ticks if ep else None),
        Check("fault remedy: total reconfiguration ticks", 19, res.summary.reconf_wall_ticks),
        Check("fault remedy: reliability R", 6.25, res.summary.R),
    ]


def split_checks(sc: Scenario) -> list[Check]:
    world = build_world(sc)
    plant, repo = world.plant, world.repo
    unit = compose(repo, Configurator(address_bits=repo.address_bits), plant, channels=world.channels)
    names = plant.space.names
    half = len(names) // 2
    probe = [("deploy", 1), None, ("deploy", 2), None, ("deploy", 0)]
    _, rep = dec_p(unit, [names[:half], names[half:]], probe)
    return [
        Check("two-way plant split: transfer ticks before", 16, rep.details["transfer_before"]),
        Check("two-way plant split: transfer ticks after", 8, rep.details["transfer_after"]),
        Check("two-way plant split: trace equivalent", True, rep.trace_equal),
    ]


def divergence_checks() -> list[Check]:
    plant = ab_divergence_plant()
    code = selection_code(plant)
    return [
        Check("A/B divergence: plant size bits", 2, plant.psi_bits),
        Check("A/B divergence: expected selection bits", Fraction(3, 2), code.expected),
        Check("A/B divergence: max selection bits", 2, code.max_length),
    ]


def budget_checks(all_or_nothing: Scenario, detours: Scenario) -> list[Check]:
    rows = {r.budget: r for r in reachability_experiment(all_or_nothing, [3, 2], theta=1)}
    det = reachability_experiment(detours)
    steps = [r.steps for r in det]
    reach = [r.steps for r in det if r.reachable]
    monotone = all(a <= b for a, b in zip(reach, reach[1:])) and all(
        not r.reachable for r in det[len(reach):]
    )
    return [
        Check("all-or-nothing, dwell 1: budget 3 steps", 1, rows[3].steps),
        Check("all-or-nothing, dwell 1: budget 2 reachable", False, rows[2].reachable),
        Check("detours: steps per budget 8/4/2/1", [1, 2, 4, None], steps),
        Check("detours: steps never shrink as budget drops", True, monotone),
    ]


def reference_checks(overrides: dict[str, Scenario] | None = None) -> list[Check]:
    """Every built-in reproduction; ``overrides`` swaps in edited scenarios by name."""
    get = lambda n: (overrides or {}).get(n) or shipped(n)  # noqa: E731
    return (
        fault_remedy_checks(get("paper_5_1"))
        + split_checks(get("paper_5_1"))
        + divergence_checks()
        + budget_checks(get("all_or_nothing"), get("detours"))
    )
