import json
import warnings

import numpy as np
import pytest

from helpers import small_spec
from kcx.hcm import (
    BoxStore,
    HarmonicSpaceSpec,
    HCMDetector,
    box_index,
    box_indices,
    calibrate_hcm,
    default_harmonic_bins,
    detect_hcm,
    harmonic_point,
    hcm_flags,
)
from kcx.io import DataError, EegRecord
from kcx.metrics import match_events
from kcx.spectral import power_spectrum
from kcx.synth import generate
from kcx.windows import WindowSpec, make_windows


def spec(floor=1.0, base=2.0, dim=1):
    return HarmonicSpaceSpec(tuple(range(1, dim + 1)), base, floor)


def test_default_bins():
    assert default_harmonic_bins() == (1, 2, 3, 4, 7)


@pytest.mark.parametrize(
    "x,expected",
    [(0.0, 0), (0.999, 0), (1.0, 1), (1.999, 1), (2.0, 2), (2 ** 2.5, 3), (4.0, 3), (1024.0, 11)],
)
def test_box_index_examples(x, expected):
    assert box_index([x], spec()) == (expected,)


def test_box_index_other_base_and_floor():
    s = spec(floor=0.5, base=10.0)
    assert box_index([0.4], s) == (0,)
    assert box_index([5.0], s) == (2,)
    assert box_index([4.999], s) == (1,)


def test_box_index_monotone_and_geometric():
    xs = np.logspace(-3, 6, 4000)
    k = box_indices(xs[:, None], spec(floor=0.3, base=3.0))[:, 0]
    assert np.all(np.diff(k) >= 0)
    # lower edge of every box k >= 1 is floor * base**(k-1): widths grow by the base
    edges = np.array([xs[np.argmax(k == j)] for j in range(2, 10)])
    ratios = edges[1:] / edges[:-1]
    np.testing.assert_allclose(ratios, 3.0, rtol=0.01)


def test_box_index_errors():
    with pytest.raises(ValueError):
        box_index([1.0], HarmonicSpaceSpec((1,)))
    with pytest.raises(ValueError):
        box_index([-1.0], spec())
    with pytest.raises(ValueError):
        box_index([1.0, 2.0], spec())
    with pytest.raises(ValueError):
        HarmonicSpaceSpec((1, 1))


def test_harmonic_point():
    n = np.arange(256)
    ps = power_spectrum(np.cos(2 * np.pi * 2 * n / 256))
    pt = harmonic_point(ps, HarmonicSpaceSpec((1, 2, 3)))
    assert pt[1] == pytest.approx(0.5) and abs(pt[0]) < 1e-20


def _tone_record(fs=250.0, dur=20.0, k=2, amp=10.0):
    t = np.arange(int(fs * dur)) / fs
    x = amp * np.cos(2 * np.pi * k * fs / 256 * t) + np.random.default_rng(0).standard_normal(t.size) * 0.01
    return EegRecord(["a", "b"], fs, np.vstack([x, x]))


def test_calibrate_collects_one_box_per_event_channel():
    rec = _tone_record()
    store = calibrate_hcm(rec, [5.0, 10.0], record_id="r1")
    assert 1 <= len(store) <= 4
    assert store.spec.linear_floor is not None
    assert store.provenance["annotations_used"] == 2
    assert store.provenance["record_ids"] == ["r1"]


def test_calibrate_skips_events_outside_window_centres():
    rec = _tone_record()
    with pytest.warns(UserWarning):
        store = calibrate_hcm(rec, [0.01, 5.0])
    assert store.provenance["skipped"] == 1


def test_calibrate_needs_annotations():
    with pytest.raises(DataError):
        calibrate_hcm(_tone_record(), [])


def test_store_json_round_trip(tmp_path):
    store = calibrate_hcm(_tone_record(), [5.0, 10.0])
    back = BoxStore.load(store.save(tmp_path / "s.json"))
    assert back.boxes == store.boxes
    assert back.spec == store.spec
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["spec"]["bins"] == [1, 2, 3, 4, 7]


def test_store_window_mismatch_rejected():
    rec = _tone_record()
    store = calibrate_hcm(rec, [5.0])
    with pytest.raises(DataError):
        detect_hcm(rec, store, window=WindowSpec(256, 13))


def test_structural_recall_with_power_condition_off(small_corpus):
    rec, truth = small_corpus.record, small_corpus.truth
    store = calibrate_hcm(rec, truth)
    flags, idx = hcm_flags(rec, store, p_t=0.0)
    for t in truth:
        assert flags[:, idx.nearest(t)].all()
    det = detect_hcm(rec, store, p_t=0.0)
    assert match_events(det, truth).tp >= 1


def test_power_condition_rejects_quiet_windows(small_corpus):
    rec = small_corpus.record
    store = calibrate_hcm(rec, small_corpus.truth)
    f0, _ = hcm_flags(rec, store, p_t=0.0)
    f5, _ = hcm_flags(rec, store, p_t=0.5)
    f9, _ = hcm_flags(rec, store, p_t=0.9)
    assert np.all(f9 <= f5) and np.all(f5 <= f0)
    assert f9.sum() < f0.sum()


def test_channel_permutation(small_corpus):
    rec, truth = small_corpus.record, small_corpus.truth
    store = calibrate_hcm(rec, truth)
    perm = np.random.default_rng(0).permutation(rec.n_channels)
    assert detect_hcm(rec, store) == detect_hcm(rec.select(perm), store)


def test_held_out_half(capsys):
    corpus = generate(small_spec(seed=5, duration_s=240.0, count=16))
    rec, truth = corpus.record, corpus.truth.events
    half = rec.n_samples // 2
    first = EegRecord(rec.channel_names, rec.sampling_rate_hz, rec.samples[:, :half])
    second = EegRecord(rec.channel_names, rec.sampling_rate_hz, rec.samples[:, half:])
    t_half = half / rec.sampling_rate_hz
    calib = truth[truth < t_half - 2]
    test_truth = truth[truth > t_half + 2] - t_half
    store = calibrate_hcm(first, calib)
    c = match_events(detect_hcm(second, store, v_t=2), test_truth)
    print(f"held-out HCM: tp={c.tp} fp={c.fp} fn={c.fn}")
    assert c.tp + c.fn == test_truth.size


def test_estimator(small_corpus):
    est = HCMDetector(v_t=2).fit(small_corpus.record, small_corpus.truth)
    assert len(est.store_) > 0
    det = est.predict(small_corpus.record)
    assert det == detect_hcm(small_corpus.record, est.store_, v_t=2)
    assert est.get_params()["p_t"] == 0.80
