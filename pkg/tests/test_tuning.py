import numpy as np
import pytest

from helpers import small_spec
from kcx.kbp import detect_kbp
from kcx.metrics import ConfusionCounts, evaluate
from kcx.synth import generate
from kcx.tuning import PARAM_NAMES, KBPGridSearch, ParamGrid, grid_search, select_best


def replay(dataset, grid):
    """Independent re-evaluation: run the public detector once per combination."""
    out = []
    for params in grid:
        total = ConfusionCounts()
        for rec, truth in dataset:
            total = total + evaluate(detect_kbp(rec, **params), truth, rec.duration_s)
        out.append((params, total))
    return out


def oracle_pick(rows, constraint):
    """Rank with explicit sort keys; stable sort keeps grid order on ties."""
    def pct(a, b):
        return None if b == 0 else 100.0 * a / b

    scored = []
    for i, (params, c) in enumerate(rows):
        t, p, f = pct(c.tp, c.tp + c.fn), pct(c.tp, c.tp + c.fp), pct(c.fp, c.fp + c.tn)
        scored.append((i, t, -1.0 if p is None else p, 101.0 if f is None else f))
    feas = [r for r in scored if r[1] is not None and r[1] >= constraint]
    if feas:
        return sorted(feas, key=lambda r: (-r[2], -r[1], r[3]))[0][0], True
    return sorted(scored, key=lambda r: (-(r[1] if r[1] is not None else -1), -r[2], r[3]))[0][0], False


@pytest.fixture(scope="module")
def dataset():
    corpora = [generate(small_spec(seed=s, duration_s=90.0, count=6)) for s in (11, 12)]
    return [(c.record, c.truth) for c in corpora]


MINI = ParamGrid(p_t_p1=(0.8, 0.9), p_t_p2=(0.9,), p_t_p3=(0.9, 0.98), p_t_p4=(0.9,),
                 p_t_s=(0.7, 0.95), v_t=(2, 3))


def test_grid_order_and_size():
    g = ParamGrid(p_t_p1=(0.1, 0.2), p_t_p2=(0.5,), p_t_p3=(0.5,), p_t_p4=(0.5,), p_t_s=(0.5,), v_t=(0, 1))
    combos = list(g)
    assert g.size == len(combos) == 4
    assert [(c["p_t_p1"], c["v_t"]) for c in combos] == [(0.1, 0), (0.1, 1), (0.2, 0), (0.2, 1)]
    assert ParamGrid().size == 15**5 * 6


def test_grid_validation():
    with pytest.raises(ValueError):
        ParamGrid.from_dict({"bogus": [1]})
    with pytest.raises(ValueError):
        ParamGrid(v_t=())
    with pytest.raises(ValueError):
        ParamGrid(p_t_s=(1.2,))


def test_select_best_examples():
    a = ConfusionCounts(tp=10, fp=10, fn=0, tn=80)   # tpr 100, ppv 50
    b = ConfusionCounts(tp=9, fp=0, fn=1, tn=90)     # tpr 90, ppv 100
    c = ConfusionCounts(tp=10, fp=5, fn=0, tn=85)    # tpr 100, ppv 66.7
    assert select_best([a, b, c], 99) == (2, True)
    assert select_best([a, b, c], 80) == (1, True)
    assert select_best([b], 99) == (0, False)
    # equal ppv and tpr: lower fpr wins, then earlier index
    d = ConfusionCounts(tp=10, fp=10, fn=0, tn=200)
    assert select_best([a, d], 99) == (1, True)
    assert select_best([a, a], 99) == (0, True)


def test_matches_exhaustive_replay(dataset):
    res = grid_search(dataset, MINI, constraint_tpr_pct=90, keep_trace=True)
    rows = replay(dataset, MINI)
    assert res.evaluated_count == len(rows) == MINI.size
    for entry, (params, c) in zip(res.trace, rows):
        assert entry["params"] == params
        assert (entry["tp"], entry["fp"], entry["fn"], entry["tn"]) == (c.tp, c.fp, c.fn, c.tn)
    i, feasible = oracle_pick(rows, 90)
    assert res.best_params == rows[i][0]
    assert res.counts == rows[i][1]
    assert res.feasible == feasible


def test_thread_count_invariance(dataset):
    a = grid_search(dataset, MINI, n_jobs=1, keep_trace=True)
    b = grid_search(dataset, MINI, n_jobs=3, keep_trace=True)
    assert a.to_dict() == b.to_dict()


def test_standalone_reproduction(dataset):
    res = grid_search(dataset, MINI, constraint_tpr_pct=90)
    total = ConfusionCounts()
    for rec, truth in dataset:
        total = total + evaluate(detect_kbp(rec, **res.best_params), truth, rec.duration_s)
    assert total == res.counts


def test_estimator_wrapper(dataset):
    X, y = zip(*dataset)
    gs = KBPGridSearch(grid=MINI.to_dict(), constraint_tpr_pct=90).fit(list(X), list(y))
    assert set(gs.best_params_) == set(PARAM_NAMES)
    assert gs.best_estimator_.get_params()["v_t"] == gs.best_params_["v_t"]
    with pytest.raises(ValueError):
        KBPGridSearch().fit(list(X), list(y)[:1])


def test_empty_dataset():
    with pytest.raises(ValueError):
        grid_search([], MINI)
