import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from s4mc.confidence import ConfidenceKind, kappa
from s4mc.tensor_core import ProbMap

K = ConfidenceKind


def test_margin_simple():
    assert kappa(np.array([0.7, 0.2, 0.1]), K.MARGIN) == pytest.approx(0.5)


@pytest.mark.parametrize("kind,expected", [(K.MAX, 1.0), (K.MARGIN, 1.0), (K.NEG_ENTROPY, 0.0)])
def test_one_hot(kind, expected):
    assert kappa(np.array([0.0, 1.0, 0.0]), kind) == pytest.approx(expected)


def test_uniform_two_class_entropy():
    assert kappa(np.array([0.5, 0.5]), K.NEG_ENTROPY) == pytest.approx(-0.693147, abs=1e-6)


def test_uniform_margin_is_zero():
    assert kappa(np.full(6, 1 / 6), K.MARGIN) == 0.0


def test_margin_needs_two_classes():
    with pytest.raises(ValueError):
        kappa(np.ones((2, 2, 1)), K.MARGIN)


def test_accepts_probmap_and_strings():
    pm = ProbMap(np.full((2, 3, 4), 0.25))
    out = kappa(pm, "max")
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out, 0.25)


def test_margin_reads_top_two_only():
    # raising the top two by the same amount (no renormalization) keeps the margin
    base = np.array([0.5, 0.3, 0.1, 0.05])
    bumped = base + np.array([0.2, 0.2, 0.0, 0.0])
    assert kappa(bumped, K.MARGIN) == pytest.approx(kappa(base, K.MARGIN))


prob_vectors = st.integers(2, 8).flatmap(
    lambda c: hnp.arrays(np.float64, (c,), elements=st.floats(0.0, 1.0)).filter(lambda v: v.sum() > 1e-6)
)


@settings(max_examples=200, deadline=None)
@given(prob_vectors, st.randoms())
def test_ranges_and_permutation_invariance(raw, rnd):
    p = raw / raw.sum()
    c = p.size
    perm = list(range(c))
    rnd.shuffle(perm)
    margin, mx, ent = (float(kappa(p, k)) for k in (K.MARGIN, K.MAX, K.NEG_ENTROPY))
    assert -1e-12 <= margin <= 1 + 1e-12
    assert 1 / c - 1e-12 <= mx <= 1 + 1e-12
    assert -math.log(c) - 1e-9 <= ent <= 1e-12
    for k, v in ((K.MARGIN, margin), (K.MAX, mx), (K.NEG_ENTROPY, ent)):
        assert float(kappa(p[perm], k)) == pytest.approx(v, abs=1e-12)


def test_vectorized_matches_per_pixel():
    rng = np.random.default_rng(0)
    maps = rng.dirichlet(np.ones(5), size=(3, 4))
    for k in K:
        full = kappa(maps, k)
        for r in range(3):
            for c in range(4):
                assert full[r, c] == pytest.approx(float(kappa(maps[r, c], k)), abs=1e-12)
