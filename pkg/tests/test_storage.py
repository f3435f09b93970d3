import itertools

import pytest

from omegasim.configspace import bits_for
from omegasim.errors import ConflictError, MissingMaskError, PatternNotFoundError, ShapeError
from omegasim.storage import (
    HEADER_BITS,
    AssemblyRule,
    Repository,
    apply_delta,
    assemble,
    compress,
    decompress,
    delta_encode,
    mean_relative_cost,
    recluster,
    relative_address,
    retrieve,
)


def random_bits(rng, n):
    return "".join("1" if b else "0" for b in rng.integers(0, 2, size=n))


def test_address_cost_for_1024_patterns():
    repo = Repository.generate(1024, 16, seed=3)
    _, cost = retrieve(repo, 517)
    assert cost == 10


def test_single_pattern_costs_nothing():
    repo = Repository.from_patterns(["0101"])
    assert retrieve(repo, 0)[1] == 0


def test_address_cost_matches_ceil_log2(rng):
    for n in rng.integers(1, 300, size=25):
        repo = Repository.from_patterns(["1"] * int(n))
        oracle = 0
        while 2**oracle < n:
            oracle += 1
        assert repo.address_bits == oracle == bits_for(int(n))


def test_missing_address():
    with pytest.raises(PatternNotFoundError):
        Repository.from_patterns(["0"]).retrieve(5)


def clustered_repo(n=6):
    repo = Repository.from_patterns([format(k, "03b") for k in range(n)])
    return repo.with_clusters({a: 0 for a in range(n)})


def test_relative_address_same_point():
    assert relative_address(clustered_repo(), 2, 2) == 0 + 1


def test_relative_address_neighbours():
    repo = clustered_repo()
    order = repo.cluster_order(0)
    assert relative_address(repo, order[0], order[1]) == 1 + 1


def test_relative_never_beats_absolute_by_more_than_flag(rng):
    repo = Repository.from_patterns([random_bits(rng, 8) for _ in range(40)])
    repo = repo.with_clusters({a: a % 3 for a in repo.addresses}).with_access(rng.integers(0, 40, size=100).tolist())
    for a, b in itertools.product(repo.addresses, repeat=2):
        assert relative_address(repo, a, b) <= repo.address_bits + 1


# deltas ----------------------------------------------------------------------


def test_identical_patterns_give_empty_delta():
    assert len(delta_encode("0110", "0110")) == 0


def test_single_flip_in_2048_bits():
    old = "0" * 2048
    new = old[:700] + "1" + old[701:]
    d = delta_encode(old, new)
    assert d.changed_positions == (700,)
    assert d.payload_bits == 11 + 1


def test_delta_round_trip(rng):
    for _ in range(200):
        n = int(rng.integers(1, 300))
        a, b = random_bits(rng, n), random_bits(rng, n)
        assert apply_delta(delta_encode(a, b), a) == b


def test_delta_length_mismatch():
    with pytest.raises(ShapeError):
        delta_encode("01", "011")


# compression ---------------------------------------------------------------


def test_all_zero_pattern_compresses_small():
    c = compress("0" * 2048)
    assert len(c) < 64
    assert decompress(c) == "0" * 2048


def test_random_pattern_expansion_bound(rng):
    for _ in range(50):
        p = random_bits(rng, int(rng.integers(1, 3000)))
        c = compress(p)
        assert len(c) <= len(p) + HEADER_BITS
        assert decompress(c) == p


def test_lossless_round_trip_on_structured_patterns(rng):
    for _ in range(100):
        runs = rng.integers(1, 40, size=int(rng.integers(1, 30)))
        p = "".join(("1" if k % 2 else "0") * int(r) for k, r in enumerate(runs))
        assert decompress(compress(p)) == p


def test_repairable_drop_counts_exactly(rng):
    p = random_bits(rng, 512)
    for k in (0, 1, 17, 200):
        positions = set(rng.choice(512, size=k, replace=False).tolist())
        mask = "".join("1" if i in positions else "0" for i in range(512))
        c = compress(p, "repairable", mask)
        assert len(c) == HEADER_BITS + c.mask_overhead + 512 - k
        restored = decompress(c)
        assert all(restored[i] == p[i] for i in range(512) if i not in positions)


def test_repairable_needs_mask():
    with pytest.raises(MissingMaskError):
        compress("0101", "repairable")


# assembly ----------------------------------------------------------------------


def test_single_full_fragment_is_identity():
    repo = Repository.from_patterns(["10110"])
    assert assemble(repo, AssemblyRule("all", 5, ((0, 0),))) == "10110"


def test_two_half_patterns_splice():
    ref1, ref2 = "1101" + "0000", "0000" + "1010"
    repo = Repository.from_patterns([ref1[:4], ref2[4:]])
    rule = AssemblyRule("mix", 8, ((0, 0), (1, 4)))
    assert assemble(repo, rule) == ref1[:4] + ref2[4:]
    # order of placements does not matter
    assert assemble(repo, AssemblyRule("mix", 8, ((1, 4), (0, 0)))) == assemble(repo, rule)


def test_assembly_missing_fragment():
    repo = Repository.from_patterns(["11"])
    with pytest.raises(PatternNotFoundError):
        assemble(repo, AssemblyRule("x", 4, ((0, 0), (3, 2))))


def test_assembly_overlap_conflict():
    repo = Repository.from_patterns(["11", "00"])
    with pytest.raises(ConflictError):
        assemble(repo, AssemblyRule("x", 4, ((0, 0), (1, 1))))


# clustering ------------------------------------------------------------------


def test_single_pair_clustered_together():
    repo = Repository.from_patterns(["00", "01", "10", "11"])
    out = recluster(repo, [(1, 3)] * 5)
    assert out.retrieve(1).cluster is not None
    assert out.retrieve(1).cluster == out.retrieve(3).cluster


def test_empty_log_is_noop():
    repo = clustered_repo()
    assert recluster(repo, []) is repo


def best_two_partition(addresses, log):
    """Brute-force 2-partition with the lightest cut (ties to the first found)."""
    best = None
    addresses = sorted(addresses)
    for r in range(1, len(addresses)):
        for part in itertools.combinations(addresses, r):
            a = set(part)
            if addresses[0] not in a:
                continue
            cut = sum(1 for x, y in log if (x in a) != (y in a))
            if best is None or cut < best[0]:
                best = (cut, frozenset(a), frozenset(set(addresses) - a))
    return {best[1], best[2]}


def test_two_communities_are_recovered():
    repo = Repository.from_patterns([format(k, "03b") for k in range(8)])
    left, right = [0, 2, 5, 7], [1, 3, 4, 6]
    log = [p for grp in (left, right) for p in itertools.combinations(grp, 2)] * 3
    out = recluster(repo, log)
    found = {}
    for a in out.addresses:
        found.setdefault(out.retrieve(a).cluster, set()).add(a)
    assert {frozenset(g) for g in found.values()} == best_two_partition(range(8), log)


def test_recluster_never_raises_mean_cost(rng):
    for _ in range(20):
        repo = Repository.from_patterns([random_bits(rng, 6) for _ in range(16)])
        log = [tuple(int(x) for x in rng.integers(0, 16, size=2)) for _ in range(30)]
        after = recluster(repo, log)
        assert mean_relative_cost(after, log) <= mean_relative_cost(repo, log)
