import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from axialvc.dsp import Spectrogram, StftConfig
from axialvc.errors import ShapeError, ValidationError
from axialvc.evaluation import (
    EvalReport,
    UtteranceScore,
    build_reference_stats,
    dtw_align,
    msd_nonparallel,
    msd_parallel,
    spectral_centroid,
)
from axialvc.selfcheck import brute_force_dtw, monotone_paths

SR = 22050


def test_monotone_path_enumeration_counts():
    # Delannoy numbers D(m-1, n-1)
    assert len(monotone_paths(1, 1)) == 1
    assert len(monotone_paths(2, 2)) == 3
    assert len(monotone_paths(3, 3)) == 13
    assert len(monotone_paths(4, 5)) == 129


def test_dtw_identical_inputs_diagonal(rng):
    a = rng.standard_normal((40, 7))
    res = dtw_align(a, a)
    assert res.total_cost == 0.0
    assert res.path == [(i, i) for i in range(7)]


def test_dtw_single_frame_visits_all(rng):
    a, b = rng.standard_normal((3, 1)), rng.standard_normal((3, 5))
    res = dtw_align(a, b)
    assert res.path == [(0, j) for j in range(5)]
    assert res.total_cost == pytest.approx(np.linalg.norm(b - a, axis=0).sum())


def test_dtw_5x6_matches_enumeration(rng):
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((4, 6))
    assert dtw_align(a, b).total_cost == pytest.approx(brute_force_dtw(a, b), rel=1e-12)


feats = st.integers(1, 6).flatmap(
    lambda ta: st.integers(1, 6).flatmap(
        lambda tb: st.tuples(
            arrays(np.float64, (3, ta), elements=st.floats(-5, 5)),
            arrays(np.float64, (3, tb), elements=st.floats(-5, 5)),
        )
    )
)


@settings(max_examples=80, deadline=None)
@given(pair=feats)
def test_dtw_properties(pair):
    a, b = pair
    res = dtw_align(a, b)
    exact = brute_force_dtw(a, b)
    assert res.total_cost == pytest.approx(exact, rel=1e-9, abs=1e-12)
    assert dtw_align(b, a).total_cost == pytest.approx(res.total_cost, rel=1e-12, abs=1e-12)
    path = res.path
    assert path[0] == (0, 0) and path[-1] == (a.shape[1] - 1, b.shape[1] - 1)
    assert all((i2 - i1, j2 - j1) in {(1, 0), (0, 1), (1, 1)} for (i1, j1), (i2, j2) in zip(path, path[1:]))
    if a.shape[1] == b.shape[1]:
        assert res.total_cost <= np.linalg.norm(a - b, axis=0).sum() + 1e-12
    assert msd_parallel(a, b) >= 0
    assert msd_parallel(a, a) == 0


def test_dtw_errors(rng):
    with pytest.raises(ValidationError):
        dtw_align(np.zeros((3, 0)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        dtw_align(np.zeros((3, 2)), np.zeros((4, 2)))


def test_msd_constant_shift(rng):
    a = rng.standard_normal((40, 12))
    c = 0.37
    assert msd_parallel(a, a + c) == pytest.approx(np.sqrt(40) * c, rel=1e-12)
    assert msd_parallel(a, a + c, multiplier=2.0) == pytest.approx(2 * np.sqrt(40) * c, rel=1e-12)


def test_msd_small_pair_equals_brute_force_normalized(rng):
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((5, 3))
    best = min(monotone_paths(4, 3), key=lambda p: sum(np.linalg.norm(a[:, i] - b[:, j]) for i, j in p))
    cost = sum(np.linalg.norm(a[:, i] - b[:, j]) for i, j in best)
    assert msd_parallel(a, b) == pytest.approx(cost / len(best), rel=1e-12)


def test_nonparallel_protocol(rng):
    refs = [rng.standard_normal((4, int(n))) for n in rng.integers(3, 7, 2)]
    conv = [rng.standard_normal((4, int(n))) for n in rng.integers(3, 7, 3)]
    stats = build_reference_stats(refs)
    res = msd_nonparallel(conv, stats)
    hand = [np.mean([msd_parallel(c, r) for r in refs]) for c in conv]
    np.testing.assert_allclose(res.per_utterance, hand, rtol=1e-12)
    assert res.converted == pytest.approx(np.mean(hand))
    same = msd_nonparallel(refs, stats)
    assert same.converted == same.ground_truth
    one = msd_nonparallel([np.zeros((4, 1))], build_reference_stats([np.ones((4, 1))]))
    assert one.converted == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        build_reference_stats([])


def test_spectral_centroid_examples():
    cfg = StftConfig(128, 32)
    mag = np.zeros((65, 4))
    mag[10] = 1.0
    assert spectral_centroid(Spectrogram(mag, cfg)) == pytest.approx(10 * SR / 128)
    flat = np.ones((65, 3))
    assert spectral_centroid(flat, SR, 128) == pytest.approx(np.mean(np.arange(65) * SR / 128))
    two = np.zeros((65, 2))
    two[4], two[20] = 1.0, 2.0  # power weights 1 and 4
    assert spectral_centroid(two, SR, 128) == pytest.approx((4 * 1 + 20 * 4) / 5 * SR / 128)
    with pytest.raises(ValidationError):
        spectral_centroid(np.zeros((65, 2)), SR)


def test_report_outputs(tmp_path):
    rep = EvalReport("A-B", "parallel", [UtteranceScore("u1", 1.5), UtteranceScore("u2", 2.5)])
    csv_path, txt_path = rep.write(tmp_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "pair,protocol,utterance,msd"
    assert lines[-2] == "A-B,parallel,__mean__,2.0"
    table = txt_path.read_text()
    assert "2.00 ± 0.50" in table and "WER" in table and "n/a" in table
