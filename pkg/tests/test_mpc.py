"""Cluster pipeline: exponentiation schedules, chunking, oracle equality."""

import numpy as np
import pytest

from conftest import realize, valid_d
from oracles import ball_members, complete, cycle, path, star
from sparsempc.generators import generate
from sparsempc.graph import GraphView
from sparsempc.mpc import (
    REPS_FIRST,
    REPS_LATER,
    Chunk,
    ChunkIndex,
    compute_schedule,
    connect_cliques,
    gather_and_peel,
    load_pipeline_config,
    mpc_h_partition,
    mpc_mark_propose,
    mpc_pipeline,
    mpc_select,
    parse_pipeline_config,
    partition_rounds,
)
from sparsempc.peeling import StallError, degeneracy, h_partition
from sparsempc.reduction import (
    mark_and_propose_matching,
    mark_and_propose_mis,
    mis_probability,
    select_matching,
    select_mis,
    solution_digest,
    solve,
    verify_maximal,
)
from sparsempc.runtime import ClusterConfig, init_cluster, metrics


def _cluster(g, delta, seed=0):
    return init_cluster(g, ClusterConfig.for_graph(g, delta), seed)


# ---------------------------------------------------------------------------
# schedule arithmetic
# ---------------------------------------------------------------------------


def test_schedule_k2_pinned():
    s = compute_schedule(8, 2 ** 15, n=10 ** 6, delta=0.5)
    assert s.k == 2  # 8^5 = 2^15 fits, 8^9 does not
    assert not s.fallback
    assert [(i, r) for i, r, _ in s.phases] == [(0, 1), (1, 2), (2, 4)]
    assert 8 ** (2 ** s.k + 1) <= s.S < 8 ** (2 ** (s.k + 1) + 1)


def test_schedule_k1_pinned():
    s = compute_schedule(2, 8, n=100, delta=0.5)
    assert s.k == 1  # 2^3 <= 8 < 2^5


def test_schedule_fallback_when_square_too_big():
    s = compute_schedule(10, 50, n=100, delta=0.5)
    assert s.fallback and s.k is None
    assert s.phases == ()


def test_schedule_trivial_degrees():
    for dm in (0, 1):
        s = compute_schedule(dm, 4, n=100, delta=0.5)
        assert s.k == 0 and not s.fallback
        assert s.phases == ((0, 1, REPS_FIRST),)


def test_schedule_repetition_counts_locked():
    s = compute_schedule(3, 10 ** 6, n=1000, delta=0.5)
    assert s.phases[0][2] == REPS_FIRST == 60
    assert all(r == REPS_LATER == 20 for _, _, r in s.phases[1:])
    with pytest.raises(ValueError, match="allow_custom_reps"):
        compute_schedule(3, 10 ** 6, n=1000, delta=0.5, reps_first=5)
    s2 = compute_schedule(
        3, 10 ** 6, n=1000, delta=0.5, reps_first=5, reps_later=2, allow_custom_reps=True
    )
    assert s2.phases[0][2] == 5 and s2.phases[1][2] == 2


def test_schedule_preprocessing_layer_count():
    # c_pre * log2((1/delta) * log2 log2 n), rounded up
    s = compute_schedule(3, 10 ** 6, n=2 ** 16, delta=0.5)
    assert s.preprocessing_layers == 6  # ceil(2 * log2(2 * 4))
    s0 = compute_schedule(3, 10 ** 6, n=2 ** 16, delta=0.5, c_pre=0.0)
    assert s0.preprocessing_layers == 0


# ---------------------------------------------------------------------------
# chunk index
# ---------------------------------------------------------------------------


def _chunk(lo, hi, radius, members):
    return Chunk(
        layer_lo=lo,
        layer_hi=hi,
        radius=radius,
        iteration=0,
        repetition=0,
        members=np.asarray(members, np.int64),
    )


def test_chunk_validate_accepts_real_run():
    g = generate("layered-core", {"n": 600, "depth": 40, "d": 3}, seed=0)
    cl = _cluster(g, 0.8)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.8)
    hp, chunks, stats = mpc_h_partition(cl, 3, sched)
    chunks.validate(hp)
    for c in chunks.chunks:
        assert c.layer_hi - c.layer_lo + 1 <= c.radius
        if c.iteration >= 0:
            assert c.radius == 2 ** c.iteration


def test_chunk_validate_rejects_gaps_and_mismatches():
    hp = h_partition(star(5), 2)  # layers: leaves 1, center 2
    good = ChunkIndex([_chunk(1, 1, 1, [1, 2, 3, 4, 5]), _chunk(2, 2, 1, [0])])
    good.validate(hp)
    with pytest.raises(ValueError, match="interval broken"):
        ChunkIndex([_chunk(2, 2, 1, [0])]).validate(hp)
    with pytest.raises(ValueError, match="members disagree"):
        ChunkIndex([_chunk(1, 1, 1, [1, 2, 3, 4]), _chunk(2, 2, 1, [0, 5])]).validate(hp)
    with pytest.raises(ValueError, match="more layers than its hop radius"):
        ChunkIndex([_chunk(1, 2, 1, list(range(6)))]).validate(hp)
    with pytest.raises(ValueError, match="partition has"):
        ChunkIndex([_chunk(1, 1, 1, [1, 2, 3, 4, 5])]).validate(hp)


# ---------------------------------------------------------------------------
# gather_and_peel / connect_cliques
# ---------------------------------------------------------------------------


def test_star_center_resolves_on_second_repetition():
    g = star(5)
    cl = _cluster(g, 0.9)
    alive = np.ones(g.n, bool)
    rel, t = gather_and_peel(cl, 1, 2, alive=alive)
    assert t == 1
    assert np.all(rel[1:] == 1) and rel[0] == 0  # center still "deeper"
    assert alive[0] and not alive[1:].any()
    rel2, t2 = gather_and_peel(cl, 1, 2, alive=alive)
    assert rel2[0] == 1 and t2 == 1  # resolved once the leaves are gone
    assert not alive.any()


def test_low_degree_nodes_always_layer_one():
    g = generate("preferential-attachment", {"n": 200, "c": 3}, seed=1)
    d = valid_d(g)
    cl = _cluster(g, 0.8)
    alive = np.ones(g.n, bool)
    rel, _ = gather_and_peel(cl, 1, d, alive=alive)
    low = g.degrees <= d
    assert np.all(rel[low] == 1)


def test_gather_and_peel_stall_matches_centralized():
    g = complete(4)
    cl = _cluster(g, 0.8)
    with pytest.raises(StallError, match="stalled"):
        gather_and_peel(cl, 1, 2, alive=np.ones(4, bool))


def test_connect_cliques_path9_ball_oracle():
    g = path(9)
    cl = init_cluster(g, ClusterConfig(n=9, m=8, delta=1.0, S=9, M=16), seed=0)
    alive = np.ones(9, bool)
    stats = connect_cliques(cl, alive, radius=2, delta_max=2)
    for v in range(9):
        ball = ball_members(g, alive, v, 2)
        want_added = len(ball) - 1 - int(g.degrees[v])
        assert cl.extra_words[v] == want_added
    # node 4 reaches 2..6: two virtual additions beyond its original edges
    assert cl.extra_words[4] == 2
    assert stats["virtual_added_max"] <= stats["virtual_bound_per_node"] == 4
    assert stats["virtual_added_total"] == int(cl.extra_words.sum())


def test_radius_one_iterations_add_no_virtual_edges():
    g = generate("grid", {"rows": 10, "cols": 10}, seed=0)
    cl = _cluster(g, 0.65)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.65)
    assert sched.k == 0  # 4^2 = 16 <= S=20 < 4^3: only radius-1 iterations
    hp, chunks, stats = mpc_h_partition(cl, 5, sched)
    met = metrics(cl)
    assert "partition-clique" not in met["rounds_by_label"]
    assert int(cl.extra_words.sum()) == 0


def test_deep_tower_uses_cliques_and_matches_oracle():
    g = generate("layered-core", {"n": 1024, "depth": 100, "d": 3}, seed=0)
    cl = _cluster(g, 0.8)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.8)
    assert sched.k is not None and sched.k >= 1
    hp, chunks, stats = mpc_h_partition(cl, 3, sched)
    ref = h_partition(g, 3)
    assert hp.ell == ref.ell == 100
    assert np.array_equal(hp.layer, ref.layer)
    chunks.validate(hp)
    met = metrics(cl)
    assert met["rounds_by_label"].get("partition-clique", 0) >= 1
    assert met["violations"] == []
    assert met["peak_words"] <= cl.cfg.S


# ---------------------------------------------------------------------------
# partition equality on mixed instances (the full 200-graph sweep lives in
# the acceptance suite)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "family,params,delta",
    [
        ("tree", {"n": 300}, 0.6),
        ("grid", {"rows": 15, "cols": 14}, 0.5),
        ("preferential-attachment", {"n": 400, "c": 3}, 0.8),
        ("bounded-degree-random", {"n": 500, "deg": 8}, 0.45),  # fallback mode
        ("layered-core", {"n": 700, "depth": 60, "d": 3}, 0.75),
    ],
)
def test_partition_equals_centralized(family, params, delta):
    g = generate(family, params, seed=3)
    d = valid_d(g) if family != "layered-core" else 3
    cl = _cluster(g, delta)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, delta)
    hp, chunks, stats = mpc_h_partition(cl, d, sched)
    ref = h_partition(g, d)
    assert np.array_equal(hp.layer, ref.layer)
    assert hp.ell == ref.ell
    chunks.validate(hp)
    assert metrics(cl)["violations"] == []


def test_partition_fallback_flag_recorded():
    g = generate("bounded-degree-random", {"n": 500, "deg": 8}, seed=3)
    cl = _cluster(g, 0.45)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.45)
    assert sched.fallback
    hp, chunks, stats = mpc_h_partition(cl, valid_d(g), sched)
    assert stats["fallback"] and stats["k"] is None
    assert all(c.radius == 1 for c in chunks.chunks)


def test_shallow_graph_finishes_within_first_iteration():
    # preprocessing disabled so the whole partition must come out of the
    # 60-repetition radius-1 iteration of the first pass; delta is picked
    # high enough that max_degree**2 fits in S (no fallback path)
    g = generate("tree", {"n": 100}, seed=7)
    cl = _cluster(g, 0.9)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.9, c_pre=0.0)
    assert not sched.fallback
    assert sched.preprocessing_layers == 0
    hp, chunks, stats = mpc_h_partition(cl, valid_d(g), sched, adaptive=True)
    assert hp.ell <= 60
    assert stats["outer_passes"] == 1
    # nothing was ever deep enough to need a hop radius above 1
    assert all(c.radius == 1 and c.iteration == 0 for c in chunks.chunks)


def test_adaptive_and_faithful_agree_on_layers():
    g = generate("layered-core", {"n": 900, "depth": 80, "d": 3}, seed=5)
    layers = []
    for adaptive in (False, True):
        cl = _cluster(g, 0.8)
        sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.8)
        hp, chunks, stats = mpc_h_partition(cl, 3, sched, adaptive=adaptive)
        layers.append(hp.layer)
    assert np.array_equal(layers[0], layers[1])


def test_partition_on_restricted_alive_mask():
    g = generate("grid", {"rows": 9, "cols": 9}, seed=0)
    alive = np.ones(g.n, bool)
    alive[::4] = False
    cl = _cluster(g, 0.6)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.6)
    hp, chunks, stats = mpc_h_partition(cl, 5, sched, alive=alive)
    sub, ids = GraphView(g, alive).compact()
    ref = h_partition(sub, 5)
    assert np.array_equal(hp.layer[ids], ref.layer)
    assert (hp.layer[~alive] == 0).all()


# ---------------------------------------------------------------------------
# mark/propose + selection equality
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["matching", "mis"])
def test_mark_propose_matches_centralized(kind):
    g = generate("preferential-attachment", {"n": 300, "c": 2}, seed=2)
    d = valid_d(g)
    hp = h_partition(g, d)
    for seed in (0, 1, 17):
        cl = _cluster(g, 0.8)
        params = {"p": mis_probability(d)} if kind == "mis" else {}
        dist = mpc_mark_propose(cl, hp, kind, params, seed)
        if kind == "matching":
            ref = mark_and_propose_matching(g, hp, seed)
        else:
            ref = mark_and_propose_mis(g, hp, mis_probability(d), seed)
        assert np.array_equal(dist.proposals.marked, ref.marked)
        assert np.array_equal(dist.proposals.proposed, ref.proposed)
        assert np.array_equal(dist.ids, np.arange(g.n))


def test_mark_propose_nothing_routes_nothing():
    g = cycle(4)  # single layer: no oriented edges, no marks
    cl = _cluster(g, 0.9)
    hp = h_partition(g, 2)
    dist = mpc_mark_propose(cl, hp, "matching", {}, seed=5)
    assert dist.proposals.marked.shape == (0, 2)
    assert dist.proposals.proposed.shape == (0, 2)
    mark_round, propose_round = cl.traces[-2], cl.traces[-1]
    assert mark_round.total_sent == 0 and propose_round.total_sent == 0


@pytest.mark.parametrize("kind", ["matching", "mis"])
def test_select_matches_centralized(kind):
    g = generate("layered-core", {"n": 1024, "depth": 100, "d": 3}, seed=0)
    cl = _cluster(g, 0.8)
    sched = compute_schedule(g.max_degree(), cl.cfg.S, g.n, 0.8)
    hp, chunks, _ = mpc_h_partition(cl, 3, sched)
    params = {"p": mis_probability(3)} if kind == "mis" else {}
    dist = mpc_mark_propose(cl, hp, kind, params, seed=9)
    sol = mpc_select(cl, hp, kind, dist, chunks)
    ref = (
        select_matching(g, hp, dist.proposals)
        if kind == "matching"
        else select_mis(g, hp, dist.proposals)
    )
    assert np.array_equal(sol.selected, ref.selected)
    assert np.array_equal(sol.removed, ref.removed)
    # every surviving node's scratch space was reclaimed chunk by chunk
    survivors = np.setdiff1d(np.arange(g.n), sol.removed)
    assert int(cl.extra_words[survivors].sum()) == 0
    assert metrics(cl)["violations"] == []


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["matching", "mis"])
def test_pipeline_matches_centralized_solve(pipeline_corpus, kind):
    for spec in pipeline_corpus:
        g = realize(spec)
        cfg = ClusterConfig.for_graph(g, spec["delta"])
        ref, _ = solve(g, kind, target_delta=4, seed=11)
        sol, met = mpc_pipeline(g, cfg, kind, target_delta=4, seed=11)
        assert solution_digest(sol, 11) == solution_digest(ref, 11), spec
        assert verify_maximal(g, sol)
        assert met["violations"] == []
        assert met["peak_words"] <= cfg.S
        assert met["kind"] == kind


def test_pipeline_adaptive_same_solution_different_metering():
    g = generate("layered-core", {"n": 900, "depth": 80, "d": 3}, seed=5)
    cfg = ClusterConfig.for_graph(g, 0.8)
    sol_f, met_f = mpc_pipeline(g, cfg, "matching", 4, seed=2, adaptive=False)
    sol_a, met_a = mpc_pipeline(g, cfg, "matching", 4, seed=2, adaptive=True)
    assert solution_digest(sol_f, 2) == solution_digest(sol_a, 2)
    assert met_f["adaptive"] is False and met_a["adaptive"] is True
    assert partition_rounds(met_f) != partition_rounds(met_a)


def test_pipeline_metrics_shape():
    g = generate("tree", {"n": 150}, seed=0)
    cfg = ClusterConfig.for_graph(g, 0.5)
    sol, met = mpc_pipeline(g, cfg, "mis", 3, seed=4)
    assert met["partition_rounds"] == partition_rounds(met)
    assert met["partition_rounds"] >= 1
    assert isinstance(met["phases"], list) and met["phases"]
    for ph in met["phases"]:
        assert ph["delta_after"] <= ph["delta_before"]
    assert met["rounds"] == sum(met["rounds_by_label"].values())
    assert met["target_delta"] == 3


def test_pipeline_trivial_graph_skips_reduction():
    g = path(6)  # max degree 2 <= target: no phases, straight to the finish
    cfg = ClusterConfig.for_graph(g, 0.6)
    sol, met = mpc_pipeline(g, cfg, "matching", 3, seed=0)
    assert met["phases"] == []
    assert verify_maximal(g, sol)


# ---------------------------------------------------------------------------
# pipeline config files
# ---------------------------------------------------------------------------


def test_parse_pipeline_config_roundtrip():
    text = """
    # experiment knobs
    delta = 0.5
    target_delta = 4
    kind = matching
    seed = 9
    adaptive = yes
    c_pre = 1.5
    exponent = 0.2
    """
    cfg = parse_pipeline_config(text)
    assert cfg == {
        "delta": 0.5,
        "target_delta": 4,
        "kind": "matching",
        "seed": 9,
        "adaptive": True,
        "c_pre": 1.5,
        "exponent": 0.2,
    }


def test_parse_pipeline_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown key"):
        parse_pipeline_config("budget = 3")
    with pytest.raises(ValueError, match="expected key = value"):
        parse_pipeline_config("deltahalf")


def test_load_pipeline_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("delta = 0.3\nadaptive = 0\nkind = mis\n")
    cfg = load_pipeline_config(p)
    assert cfg == {"delta": 0.3, "adaptive": False, "kind": "mis"}
