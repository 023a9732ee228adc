import numpy as np
import pytest

import oracles
from jointembed.errors import EmptyGalleryAfterFilter, NoRelevant
from jointembed.evaluation import (
    EvalItem,
    average_precision,
    cmc,
    evaluate,
    markdown_table,
    rank_gallery,
    write_report_csv,
)


def item(vec, ident, cam):
    return EvalItem(np.asarray(vec, dtype=float), ident, cam)


def random_instance(rng, n_ids=4, n_cams=3, dim=3):
    """Probes whose identities all have at least one cross-camera gallery match."""
    nq, ng = int(rng.integers(1, 10)), int(rng.integers(5, 51))
    g_ids, g_cams = rng.integers(0, n_ids, ng), rng.integers(0, n_cams, ng)
    q_ids, q_cams = [], []
    while len(q_ids) < nq:
        i, c = int(rng.integers(0, n_ids)), int(rng.integers(0, n_cams))
        if np.any((g_ids == i) & (g_cams != c)):
            q_ids.append(i)
            q_cams.append(c)
    return (rng.standard_normal((nq, dim)), np.array(q_ids), np.array(q_cams),
            rng.standard_normal((ng, dim)), g_ids, g_cams)


def test_rank_gallery_filters_same_view():
    probe = item([1, 0], 1, 1)
    gallery = [item([1, 0], 1, 1), item([0.9, 0.1], 1, 2), item([0.5, 0.5], 2, 1)]
    assert rank_gallery(probe, gallery) == [1, 2]
    with pytest.raises(EmptyGalleryAfterFilter):
        rank_gallery(probe, [item([1, 0], 1, 1), item([0, 1], 1, 1)])


def test_rank_gallery_orders_by_cosine(rng):
    probe = item(rng.standard_normal(3), 0, 0)
    gallery = [item(rng.standard_normal(3), i, 1) for i in range(5)]
    order = rank_gallery(probe, gallery)
    sims = [oracles.cosine(probe.embedding, g.embedding) for g in gallery]
    assert order == sorted(range(5), key=lambda i: -sims[i])


def test_rank_gallery_ties_keep_gallery_order():
    probe = item([1, 0], 0, 0)
    gallery = [item([0, 1], 1, 1), item([2, 0], 2, 1), item([1, 0], 3, 1), item([0, 3], 4, 1)]
    assert rank_gallery(probe, gallery) == [1, 2, 0, 3]


@pytest.mark.parametrize("flags, ap", [([1, 0, 1], (1 + 2 / 3) / 2), ([1, 1, 1, 1], 1.0), ([0, 1], 0.5)])
def test_average_precision_examples(flags, ap):
    assert average_precision(flags) == ap


def test_average_precision_needs_a_hit():
    with pytest.raises(NoRelevant):
        average_precision([0, 0, 0])


def test_cmc_examples():
    np.testing.assert_array_equal(cmc([[0, 1, 0, 0]], 4), [0, 1, 1, 1])
    curve = cmc([[1, 0, 0], [0, 0, 1]], 3)
    assert curve[0] == 0.5 and curve[2] == 1.0
    with pytest.raises(NoRelevant):
        cmc([[1, 0], [0, 0]], 2)


def test_evaluate_matches_bruteforce(rng, backend):
    for _ in range(50):
        inst = random_instance(rng)
        rep = evaluate(*inst, max_k=10, backend=backend)
        ref_cmc, ref_map, ref_ap = oracles.retrieval(*inst, max_k=10)
        assert rep.cmc.tolist() == ref_cmc
        assert rep.map == ref_map
        assert rep.ap.tolist() == ref_ap
        assert np.all(np.diff(rep.cmc) >= 0) and 0 <= rep.map <= 1


def test_duplicates_under_other_cameras_give_perfect_scores(rng):
    x = rng.standard_normal((6, 4))
    ids = np.arange(6)
    rep = evaluate(x, ids, np.zeros(6, int), x.copy(), ids, np.ones(6, int))
    assert rep.rank(1) == 1.0 and rep.map == 1.0


def test_random_embeddings_score_near_chance(rng):
    n_ids, per = 20, 5
    g_ids = np.repeat(np.arange(n_ids), per)
    g_cams = np.tile(np.arange(per), n_ids)
    q_ids = np.arange(n_ids).repeat(3)
    q_cams = np.full(len(q_ids), per)
    maps = [evaluate(rng.standard_normal((len(q_ids), 8)), q_ids, q_cams,
                     rng.standard_normal((len(g_ids), 8)), g_ids, g_cams).map for _ in range(5)]
    assert 0.02 < np.mean(maps) < 0.15


def test_invariant_to_gallery_permutation_and_scale(rng):
    inst = random_instance(rng)
    rep = evaluate(*inst)
    q, qi, qc, g, gi, gc = inst
    perm = rng.permutation(len(gi))
    shuffled = evaluate(q, qi, qc, g[perm], gi[perm], gc[perm])
    assert shuffled.same_as(rep)
    assert evaluate(3.0 * q, qi, qc, 0.5 * g, gi, gc).same_as(rep)


def test_evaluate_reports_failing_query():
    x = np.eye(3)
    with pytest.raises(NoRelevant, match="query 1"):
        evaluate(x[:2], [0, 5], [0, 0], x, [0, 1, 2], [1, 1, 1])
    with pytest.raises(EmptyGalleryAfterFilter, match="query 0"):
        evaluate(x[:1], [0], [0], x[:1], [0], [0])


def test_report_files(tmp_path, rng):
    rep = evaluate(*random_instance(rng), max_k=10)
    path = tmp_path / "r.csv"
    write_report_csv(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,value" and lines[1].startswith("rank_1,") and lines[-1].startswith("map,")
    assert len(lines) == 12
    table = markdown_table([("AM0BH", rep)])
    assert table.splitlines()[0] == "| Method | Rank-1 | Rank-5 | Rank-10 | mAP |"
    stats = {"Rank-1": (0.9, 0.01), "Rank-5": (0.95, 0.0), "Rank-10": (1.0, 0.0), "mAP": (0.8, 0.02)}
    assert "| BH | 90.00 ± 1.00 | 95.00 ± 0.00 | 100.00 ± 0.00 | 80.00 ± 2.00 |" in markdown_table([("BH", stats)])


def test_trained_model_beats_untrained_params():
    from jointembed.config import bundled
    from jointembed.data import generate
    from jointembed.evaluation import evaluate_dataset
    from jointembed.experiments import train_and_evaluate
    from jointembed.model import identity_embedding, init_params

    cfg = bundled("demo")
    ds = generate(cfg.synth_config())
    trained = train_and_evaluate(cfg, ds)
    untrained = init_params(trained.model_cfg, cfg.seed)
    before = evaluate_dataset(lambda x: identity_embedding(untrained, trained.model_cfg, x), ds)
    assert trained.report.map > before.map
    assert trained.report.rank(1) > before.rank(1)
