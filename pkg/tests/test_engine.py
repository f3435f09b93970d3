import itertools
import math

import pytest

from omegasim.engine import (
    LEDGER_HEADER,
    TRACE_HEADER,
    behavior_metrics,
    build_world,
    dwell_bfs,
    load_scenario,
    parse_scenario,
    reachability_experiment,
    run,
    safety_report,
    serialize,
    system_hazard_key,
)
from omegasim.engine.checks import shipped, shipped_names
from omegasim.errors import RunAbortedError, ScenarioError

from conftest import SCENARIOS, hamming

MINIMAL = """SPACE
  x = boolean
STORAGE
  patterns:
    0
"""


def scenario(text, name="t"):
    return parse_scenario(text, name)


# DSL -----------------------------------------------------------------------------


def test_minimal_scenario_gets_defaults():
    sc = scenario(MINIMAL)
    assert [d.name for d in sc.dims] == ["x"]
    assert sc.get("CHANNELS", "q") == 1.0
    assert sc.get("CONTROLLER", "strategy") == "spontaneous"
    assert sc.get("RUN", "ticks") == 10
    assert sc.get("PLANT", "policy") == "clamp"
    assert math.isinf(sc.get("CONTROLLER", "damage_cap"))
    assert sc.table("STORAGE", "patterns") == (("0", "-"),)


@pytest.mark.parametrize("name", shipped_names())
def test_round_trip_on_shipped_corpus(name):
    sc = shipped(name)
    once = parse_scenario(serialize(sc), name)
    assert once == sc
    assert serialize(once) == serialize(sc)


def test_load_scenario_reads_files():
    assert load_scenario(SCENARIOS / "detours.scn") == shipped("detours")
    with pytest.raises(ScenarioError):
        load_scenario(SCENARIOS / "missing.scn")


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("SPACE\n  x = boolean\nCHANNELS\n  qq = 1\n", 4, 3),
        ("SPACE\n  x = boolean\nCHANNELS\n  q = abc\n", 4, 7),
        ("SPACE\n  x = boolean\nBOGUS\n", 3, 1),
        ("SPACE\n  x = wobbly\n", 2, 7),
        ("SPACE\n  x = boolean\nCHANNELS\n  q = 1\n  q = 2\n", 5, 3),
        ("SPACE\n  x = boolean\nSTORAGE\n  patterns:\n    0 a b\n", 5, 5),
        ("SPACE\n\tx = boolean\n", 2, 1),
    ],
)
def test_errors_carry_location(text, line, column):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert (info.value.line, info.value.column) == (line, column)
    assert f"line {line}" in str(info.value)


def test_cross_field_validation():
    with pytest.raises(ScenarioError, match="duplex"):
        scenario(MINIMAL + "CHANNELS\n  duplex = true\n")
    with pytest.raises(ScenarioError, match="unknown dimension"):
        scenario(MINIMAL + "LEGAL\n  constraint:\n    y 0 1\n")
    with pytest.raises(ScenarioError, match="no dimensions"):
        scenario("RUN\n  ticks = 3\n")


def test_reference_scenario_fields():
    sc = shipped("paper_5_1")
    world = build_world(sc)
    assert sc.get("CONTROLLER", "error_classes") == 8
    assert len(world.repo) == 1024
    assert world.width == 2048
    ch = world.channels
    assert (ch.q, ch.r, ch.n, ch.m) == (1, 5, 128, 128)


# run loop ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def reference_run():
    return run(shipped("paper_5_1"))


def test_reference_phases(reference_run):
    ep, = reference_run.trace.episodes
    assert ep.phases == {"identify": 3, "select": 2, "transfer": 16}
    assert ep.frozen_ticks == 16
    # three sequential phases; the reported 19 is recorded as a known conflict
    assert reference_run.summary.reconf_wall_ticks == 21
    assert reference_run.summary.R == pytest.approx(6.25, rel=0, abs=1e-12)


def test_virtual_time_frozen_during_transfer(reference_run):
    recs = reference_run.trace.records
    frozen = [r for r in recs if r.frozen]
    assert len(frozen) == 16
    assert len({r.virtual_time for r in frozen}) == 1
    for a, b in zip(recs, recs[1:]):
        assert b.virtual_time - a.virtual_time == (0 if b.frozen else 1)


ITERATIVE = """SPACE
  b[12] = boolean
STORAGE
  patterns:
    000000000000
    000000000011
CHANNELS
  n = 12
  m = 12
CONTROLLER
  strategy = iterative
  step_budget = 1
  damage_cap = 10
ENVIRONMENT
  initial_demand = 0
  events:
    0 demand 1
RUN
  ticks = 20
"""


def test_iterative_strategy_advances_virtual_time():
    res = run(scenario(ITERATIVE))
    ep, = res.trace.episodes
    # two 1-bit deltas beat one 12-bit full pattern on cost
    assert ep.strategy == "iterative"
    assert ep.phases == {"identify": 0, "select": 1, "transfer": 2, "gap": 1}
    window = [r for r in res.trace.records if ep.start <= r.tick <= ep.end]
    frozen = [r.tick for r in window if r.frozen]
    assert len(frozen) == 2
    vt = {r.tick: r.virtual_time for r in window}
    assert vt[frozen[-1]] > vt[frozen[0]]
    assert [r.active_code for r in window if r.frozen] == [0b01, 0b11]


def test_determinism_byte_identical(reference_run):
    for name in shipped_names():
        a, b = run(shipped(name)), run(shipped(name))
        assert a.trace.to_csv() == b.trace.to_csv()
        assert a.trace.ledger_csv() == b.trace.ledger_csv()
        assert a.summary.dumps() == b.summary.dumps()


def test_trace_format(reference_run):
    lines = reference_run.trace.to_csv().splitlines()
    assert lines[0] == TRACE_HEADER
    assert all(len(line.split(",")) == 8 for line in lines)
    assert reference_run.trace.ledger_csv().splitlines()[0] == LEDGER_HEADER
    assert set(reference_run.summary.to_json()) == {
        "total_damage", "reconf_wall_ticks", "R", "h_k", "h_kp", "S", "mode_switches", "erratic"
    }


@pytest.mark.parametrize("name", shipped_names())
def test_damage_sum(name):
    res = run(shipped(name))
    assert res.summary.total_damage == math.fsum(r.damage for r in res.trace.records)


NOISY = """SPACE
  b[256] = boolean
STORAGE
  generate = 4
  seed = 3
CHANNELS
  n = 50
  m = 64
  ber = {ber}
  duplex = true
  parity = true
ENVIRONMENT
  initial_demand = 0
  events:
    0 demand 1
    30 demand 2
RUN
  ticks = 60
  seed = {seed}
"""


def _ledger_rows(res):
    rows = res.trace.ledger_csv().splitlines()[1:]
    return [r.split(",") for r in rows]


@pytest.mark.parametrize("ber", [0.0, 0.002, 0.005])
def test_bit_conservation(ber):
    res = run(scenario(NOISY.format(ber=ber, seed=7)))
    assert res.trace.conserved
    rows = _ledger_rows(res)
    # per-tick channel usage and the ledger agree
    usage = {}
    for r in res.trace.records:
        for ch, b in r.usage.items():
            if b:
                usage[(r.tick, ch)] = b
    assert usage == {(int(t), ch): int(s) for t, ch, s, *_ in rows}
    # every n job: sent = payload + redundancy + re-requests; payload is one full pattern
    jobs = {}
    for t, ch, sent, red, rq, job in rows:
        if ch == "n":
            acc = jobs.setdefault(job, [0, 0, 0])
            acc[0] += int(sent)
            acc[1] += int(red)
            acc[2] += int(rq)
    assert len(jobs) == 2
    for sent, red, rq in jobs.values():
        assert sent == 256 + red + rq
        assert red == 8 * 4  # one check byte per 64-bit block
        if ber == 0:
            assert rq == 0


def test_transfer_ticks_monotone_in_error_rate():
    for seed in range(5):
        totals = []
        for ber in (0.0, 0.0005, 0.001, 0.003, 0.005):
            res = run(scenario(NOISY.format(ber=ber, seed=seed)))
            totals.append(sum(e.phases.get("transfer", 0) for e in res.trace.episodes))
        assert totals == sorted(totals), (seed, totals)


def test_synchronized_is_a_fixed_point():
    res = run(shipped("synchronized"))
    assert res.trace.episodes == []
    assert res.s == 0.0 and res.a == 0.0
    assert res.summary.reconf_wall_ticks == 0


def test_oscillating_recovers():
    res = run(shipped("oscillating"))
    assert res.summary.erratic
    assert res.trace.recovery_events == [9]
    assert res.trace.records[9].active_code == 0b010
    assert "erratic" in res.trace.records[9].events


def test_abort_without_eligible_strategy():
    text = ITERATIVE.replace("strategy = iterative", "strategy = spontaneous").replace("damage_cap = 10", "damage_cap = 0")
    with pytest.raises(RunAbortedError, match="no strategy"):
        run(scenario(text))
    rescued = run(scenario(text.replace("damage_cap = 0", "damage_cap = 0\n  recovery = 1")))
    assert [e.kind for e in rescued.trace.episodes] == ["recovery"]
    assert rescued.trace.records[-1].active_code == 0b11


def test_fault_without_remedy_aborts():
    with pytest.raises(RunAbortedError):
        run(scenario(MINIMAL + "ENVIRONMENT\n  events:\n    0 fault 5\n"))


# reachability --------------------------------------------------------------------


def dwell_oracle(legal: dict, width: int, start: int, goal: int, budget: int, theta: int, depth: int):
    """Shortest path by iterative deepening over explicit sequences (<= depth moves)."""
    moves = [m for m in range(1, 2**width) if bin(m).count("1") <= budget]

    def ok(seq):
        run_len = 0
        for c in seq:
            if legal[c]:
                if run_len and run_len + 1 > theta:
                    return False
                run_len = 0
            else:
                run_len += 1
                if run_len + 1 > theta:
                    return False
        return True

    def dfs(seq, left):
        if seq[-1] == goal:
            return True
        if left == 0:
            return False
        for m in moves:
            nxt = seq + [seq[-1] ^ m]
            if ok(nxt) and dfs(nxt, left - 1):
                return True
        return False

    for d in range(depth + 1):
        if dfs([start], d):
            return d
    return None


def whitelist_scenario(width, legal_codes, theta=0):
    rows = "\n".join("    " + format(c, f"0{width}b") for c in legal_codes)
    return scenario(
        f"SPACE\n  b[{width}] = boolean\nLEGAL\n  whitelist:\n{rows}\n"
        f"STORAGE\n  patterns:\n    {format(legal_codes[0], f'0{width}b')}\nRUN\n  theta = {theta}\n"
    )


def test_all_or_nothing():
    sc = shipped("all_or_nothing")
    rows = {r.budget: r for r in reachability_experiment(sc, [3, 2, 1], theta=1)}
    assert rows[3].reachable and rows[3].steps == 1 and rows[3].wall_ticks == 1
    assert not rows[2].reachable and not rows[1].reachable
    legal = {c: c in (0, 7) for c in range(8)}
    for b in (1, 2, 3):
        assert dwell_oracle(legal, 3, 7, 0, b, 1, 6) == rows[b].steps


def test_all_or_nothing_longer_dwell():
    # two ticks of tolerance admit one mixed intermediate state
    rows = {r.budget: r for r in reachability_experiment(shipped("all_or_nothing"), [2, 1], theta=2)}
    assert rows[2].steps == 2
    assert not rows[1].reachable


def test_detours_against_oracle():
    sc = shipped("detours")
    out = reachability_experiment(sc)
    assert [r.budget for r in out] == [8, 4, 2, 1]
    assert [r.steps for r in out] == [1, 2, 4, None]
    stones = [0b00000000, 0b11000000, 0b11110000, 0b11111100, 0b11111111]
    legal = {c: c in stones for c in range(256)}
    for r in out:
        assert dwell_oracle(legal, 8, 0, 255, r.budget, 0, 5) == r.steps
        if r.reachable:
            assert r.path[0] == "00000000" and r.path[-1] == "11111111"
            for a, b in zip(r.path, r.path[1:]):
                assert 1 <= hamming(a, b) <= r.budget


def test_dwell_bfs_matches_oracle_on_random_spaces(rng):
    for _ in range(40):
        legal_codes = sorted({int(c) for c in rng.choice(8, size=int(rng.integers(2, 6)), replace=False)})
        world = build_world(whitelist_scenario(3, legal_codes))
        legal = {c: c in legal_codes for c in range(8)}
        s, g = legal_codes[0], legal_codes[-1]
        for budget, theta in itertools.product((1, 2, 3), (0, 1, 2, 3)):
            path = dwell_bfs(world.space, s, g, budget, theta)
            got = None if path is None else len(path) - 1
            want = dwell_oracle(legal, 3, s, g, budget, theta, 6)
            if got is not None and got > 6:
                assert want is None
            else:
                assert got == want, (legal_codes, budget, theta)


def test_full_budget_in_all_legal_space():
    for width in (1, 3, 5):
        sc = scenario(
            f"SPACE\n  b[{width}] = boolean\nSTORAGE\n  patterns:\n    {'0' * width}\n"
            f"RUN\n  start = {'0' * width}\n  goal = {'1' * width}\n"
        )
        out = reachability_experiment(sc, [width, width + 2])
        assert [r.steps for r in out] == [1, 1]


# safety --------------------------------------------------------------------------


HYBRID = """SPACE
  p = int 0 3
  env.t = int 0 3
LEGAL
  constraint:
    p 0 2
    env.t 1 3
STORAGE
  patterns:
    00
CHANNELS
  m = 3
RUN
  epsilon = 0.25
"""


def test_hybrid_safety_against_exhaustive_oracle():
    sc = scenario(HYBRID)
    rep = safety_report(sc)
    legal = [(p << 2 | t, p <= 2 and t >= 1) for p in range(4) for t in range(4)]
    good = [c for c, ok in legal if ok]
    bad = [c for c, ok in legal if not ok]
    want_kp = min(bin(a ^ b).count("1") for a in good for b in bad)
    want_k = min(bin(a ^ b).count("1") for a in range(3) for b in (3,))
    assert rep.h_kp == want_kp
    assert rep.h_k == want_k
    assert rep.R == 3 / (0.25 * 2)
    assert rep.S == rep.h_kp * rep.R


def test_hybrid_key_tightens_with_environment():
    sc = scenario(HYBRID.replace("    p 0 2\n", ""))
    rep = safety_report(sc)
    assert rep.h_k is None  # plant alone has no illegal point
    assert rep.h_kp == 1


def test_no_hazard_report():
    rep = safety_report(scenario(MINIMAL))
    assert rep.h_k is None and rep.h_kp is None
    assert rep.S is None
    assert run(scenario(MINIMAL)).summary.S is None


def test_system_key_is_minimum():
    assert system_hazard_key([3, 1, 2]) == 1
    assert system_hazard_key([None, 4]) == 4
    assert system_hazard_key([None, None]) is None
    keys = [safety_report(whitelist_scenario(4, codes)).h_k for codes in ([0, 15], [0, 1, 3, 7, 15], [5])]
    assert system_hazard_key(keys) == min(keys)


# behaviour -----------------------------------------------------------------------


def test_static_run_behaviour():
    bm = behavior_metrics(run(scenario(MINIMAL)).trace)
    assert len(bm.segments) == 1
    assert bm.episodes == 0 and not bm.erratic


def test_scheduled_switch_beats_greedy():
    greedy = run(shipped("two_mode"))
    sc = shipped("two_mode").with_value("CONTROLLER", "switching", "scheduled")
    sched = run(sc)
    g = behavior_metrics(greedy.trace).switch_excess
    s = behavior_metrics(sched.trace).switch_excess
    assert g == [3] and s == [0]
    assert sum(s) < sum(g)
    assert [seg[0] for seg in behavior_metrics(sched.trace).segments] == ["A", "B"]


def test_oscillation_flags_erratic():
    res = run(shipped("oscillating"))
    bm = behavior_metrics(res.trace)
    w, th = res.trace.erratic_window, res.trace.erratic_threshold
    starts = bm.reconfiguration_starts
    peak = max(sum(1 for x in starts if s - w < x <= s) for s in starts)
    assert bm.peak_rate == peak
    assert bm.erratic == (peak > th) is True
    assert bm.recommend_recovery
    # halving the flip rate keeps the controller below the threshold
    calm = shipped("oscillating").with_value("CONTROLLER", "erratic_threshold", 10)
    assert not behavior_metrics(run(calm).trace).erratic


def test_self_propulsion_counts_q_reports():
    bm = behavior_metrics(run(shipped("oscillating")).trace)
    assert bm.excited == 4
    assert bm.self_propelled == 0
