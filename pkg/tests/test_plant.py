import itertools
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from omegasim.configspace import ConfigSpace, Dimension, bit_distance
from omegasim.errors import CapacityError, DisturbanceRangeError, DomainError, MappingError
from omegasim.plant import (
    ArrayPlant,
    Jump,
    Plant,
    ReliabilityParams,
    SubPlant,
    ab_divergence_plant,
    build_corrective_field,
    corrective_field_violations,
    find_cycle,
    flatten,
    pseudo_decision_run,
    reliability,
    selection_code,
    trajectory,
)


def chain_plant(n=4):
    sp = ConfigSpace.of(Dimension.integer("x", 0, n - 1))
    return Plant(sp, [SubPlant(min(a + 1, n - 1)) for a in range(n)], program=tuple(range(n)))


def random_plant(rng, width):
    sp = ConfigSpace.booleans(width)
    return Plant(sp, [SubPlant(int(s)) for s in rng.integers(0, sp.size, size=sp.size)])


def test_self_loop_holds():
    sp = ConfigSpace.booleans(2)
    p = Plant(sp, [SubPlant(a) for a in range(4)], active=2)
    for _ in range(5):
        p.step()
    assert p.active == 2


def test_chain_is_traversed_in_order():
    p = chain_plant()
    seen = [p.active]
    for _ in range(3):
        a, out = p.step()
        seen.append(a)
    assert seen == [0, 1, 2, 3]
    assert p.step() == (3, (3,))


def test_degenerate_output_is_own_configuration():
    p = chain_plant()
    assert p.step()[1] == (0,)


def test_input_dependent_output_keeps_successor_fixed():
    sp = ConfigSpace.booleans(1)
    p = Plant(sp, [SubPlant(1, {"x": 10, "y": 20}), SubPlant(0, lambda v: v * 2)])
    assert p.step("y") == (1, 20)
    assert p.step(4) == (0, 8)


def test_total_table_required():
    with pytest.raises(ValueError):
        Plant(ConfigSpace.booleans(2), [SubPlant(0)] * 3)


def test_tabulated_cap():
    with pytest.raises(CapacityError):
        Plant(ConfigSpace.booleans(4), [SubPlant(0)] * 16, cap=8)


@pytest.mark.parametrize("width,radius", [(4, 1), (6, 2), (8, 3), (10, 2)])
def test_corrective_field_returns_within_radius(width, radius):
    sp = ConfigSpace.booleans(width)
    program = [0, 3, 7, 15][: max(2, width // 3)]
    succ = list(range(sp.size))
    for a, b in zip(program, program[1:] + program[:1]):
        succ[a] = b
    field = build_corrective_field(sp, program, radius)
    p = Plant(sp, [SubPlant(s) for s in succ], corrective_field=field, program=program)
    assert corrective_field_violations(p, radius) == []
    # independent oracle: walk each in-basin point by hand
    prog_pts = [sp.point_from_index(a) for a in program]
    m = p.successor_map()
    for a in range(sp.size):
        pt = sp.point_from_index(a)
        d = min(bit_distance(pt, q) for q in prog_pts)
        if d == 0 or d > radius:
            continue
        x = a
        for _ in range(d):
            x = m[x]
        assert x in program


def test_disturbed_chain_rejoins_program():
    sp = ConfigSpace.booleans(4)
    program = [0, 1, 3, 7, 15]
    succ = list(range(16))
    for a, b in zip(program, program[1:] + [0]):
        succ[a] = b
    field = build_corrective_field(sp, program, 2)
    p = Plant(sp, [SubPlant(s) for s in succ], corrective_field=field, program=program)
    p.step(disturbance=Jump(0b1010))
    for _ in range(2):
        p.step()
    assert p.active in program


def test_autonomous_run_reaches_cycle_within_space_size(rng):
    for width in (1, 3, 5, 8):
        p = random_plant(rng, width)
        succ = p.successor_map()
        for a in range(p.size):
            lead, length = find_cycle(succ, a)
            assert lead + length <= p.size and length >= 1
            path = trajectory(succ, a)
            assert len(path) - 1 == lead + length


def test_disturbance_policies():
    sp = ConfigSpace.of(Dimension.integer("x", 0, 5))
    base = [SubPlant(a) for a in range(6)]
    assert Plant(sp, base, policy="wrap").apply_disturbance(4, 3) == 1
    assert Plant(sp, base, policy="clamp").apply_disturbance(4, 3) in range(6)
    with pytest.raises(DisturbanceRangeError):
        Plant(sp, base, policy="strict").apply_disturbance(4, 3)


def test_clock_rate_phase_accumulator():
    p = chain_plant()
    p.clock_rate = Fraction(1, 3)
    assert [p.steps_due() for _ in range(6)] == [0, 0, 1, 0, 0, 1]


# divergences and sizes -------------------------------------------------------


def test_ab_plant_sizes():
    p = ab_divergence_plant()
    tables = p.selection_tables()
    assert len(set(tables.values())) == 4
    assert p.psi_bits == 2
    code = selection_code(p)
    assert code.expected == Fraction(3, 2)
    assert code.max_length == 2


def test_remap_to_current_settings_is_fixed_point():
    p = ab_divergence_plant()
    q = p.remap(dict(p.settings))
    assert q.successor_map() == p.successor_map()


def test_remap_only_touches_divergence_addresses():
    p = ab_divergence_plant()
    base = p.successor_map()
    addrs = {dv.address for dv in p.divergences.values()}
    for combo in itertools.product((0, 1), repeat=2):
        q = p.remap({"A": combo[0], "B": combo[1]})
        diff = {a for a, (x, y) in enumerate(zip(base, q.successor_map())) if x != y}
        assert diff <= addrs


def test_remap_unknown_parameter():
    with pytest.raises(MappingError):
        ab_divergence_plant().remap({"C": 1})


# nesting -------------------------------------------------------------------


def nested_plant(inner_size=2):
    inner = Plant(ConfigSpace.booleans(inner_size, "i"), [SubPlant((a + 1) % 2**inner_size) for a in range(2**inner_size)])
    outer_space = ConfigSpace.booleans(2, "o")
    table = [SubPlant(1), SubPlant(2, inner=inner), SubPlant(3), SubPlant(0, {0: "a", 1: "b"})]
    return Plant(outer_space, table)


def test_flatten_trivial_inner_is_relabeling():
    inner = Plant(ConfigSpace.booleans(0, "i"), [SubPlant(0)])
    outer = Plant(ConfigSpace.booleans(2, "o"), [SubPlant(1), SubPlant(2, inner=inner), SubPlant(3), SubPlant(0)])
    flat = flatten(outer)
    assert flat.successor_map() == outer.successor_map()
    assert flat.size == outer.size


def test_flatten_preserves_traces_exhaustively():
    for length in range(1, 9):
        for inputs in itertools.product((0, 1), repeat=length):
            nested = nested_plant()
            flat = flatten(nested)
            a = [out for _, out in nested.copy().run(inputs)]
            b = [out for _, out in flat.run(inputs)]
            assert a == b


def test_flatten_is_idempotent():
    flat = flatten(nested_plant())
    again = flatten(flat)
    assert again.successor_map() == flat.successor_map()
    assert again.table_hash() == flat.table_hash()


# pseudo-decisions ----------------------------------------------------------


def test_empty_schedule_equals_autonomous_run():
    p = chain_plant()
    tr = pseudo_decision_run(p, {}, 5)
    q = p.copy()
    assert tr.addresses == [0] + [q.step()[0] for _ in range(5)]


def test_schedule_branches_without_policy_change():
    sp = ConfigSpace.of(Dimension.integer("x", 0, 7))
    # arm one: 0 -> 1 -> 2 -> 3 (rest); arm two: 4 -> 5 -> 6 -> 7 (rest)
    succ = [1, 2, 3, 3, 5, 6, 7, 7]
    p = Plant(sp, [SubPlant(s) for s in succ])
    tr = pseudo_decision_run(p, {0: Jump(4)}, 4)
    assert tr.addresses == [0, 4, 5, 6, 7]
    assert tr.policy_unchanged
    assert pseudo_decision_run(p, {0: Jump(4)}, 4).addresses == tr.addresses


# reliability ---------------------------------------------------------------


def test_reliability_values():
    assert reliability(ReliabilityParams(0.01, 128, 2048)) == pytest.approx(6.25, rel=0, abs=1e-12)
    assert reliability(ReliabilityParams(0.5, 4.0, 8.0)) == 1.0
    r1 = reliability(ReliabilityParams(0.02, 100, 64))
    assert reliability(ReliabilityParams(0.02, 200, 64)) == pytest.approx(2 * r1)


def test_reliability_domain():
    with pytest.raises(DomainError):
        reliability(ReliabilityParams(0.0, 1, 1))


# alternates ----------------------------------------------------------------


def test_alternate_frequencies_match_declared_probabilities():
    sp = ConfigSpace.booleans(2)
    probs = (0.2, 0.3, 0.5)
    table = [SubPlant(1, alternates=((probs[0], 1), (probs[1], 2), (probs[2], 3)))] + [SubPlant(0)] * 3
    p = Plant(sp, table, seed=7)
    n = 10_000
    counts = Counter(p.autonomous_successor(0) for _ in range(n))
    chi2 = sum((counts[k + 1] - n * q) ** 2 / (n * q) for k, q in enumerate(probs))
    assert chi2 < 13.82  # df = 2, p = 0.001


def test_alternates_must_sum_to_one():
    with pytest.raises(ValueError):
        SubPlant(0, alternates=((0.5, 0), (0.4, 1)))


# arrays ---------------------------------------------------------------------


def test_static_array_plant():
    ap = ArrayPlant.static(Dimension.boolean("c"), 2048, "cell")
    assert ap.psi_bits == 2048
    before = ap.point
    ap.step()
    assert ap.point == before
