import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, rel_err

from gmmd.kernels import (
    DEFAULT_MULTIPLIERS,
    EuclideanMetric,
    KernelMetric,
    KernelSpec,
    gram_matrix,
    induced_distance_matrix,
    induced_metric,
    kernel_eval,
    median_bandwidths,
)

# high-precision (mpmath, 30 digits) evaluations of the closed forms
EXP_M_HALF = 0.606530659712633423603799534991
MIX_12_AT_2 = 0.370932971474623057748899514982
RHO_01 = 0.887095643419994004871922229636


def test_kernel_eval_examples():
    assert kernel_eval(KernelSpec((1.0,)), [0.0], [0.0]) == 1.0
    assert kernel_eval(KernelSpec((1.0,)), [0.0], [1.0]) == pytest.approx(EXP_M_HALF, abs=1e-15)
    assert kernel_eval(KernelSpec((1.0, 2.0)), [0.0], [2.0]) == pytest.approx(MIX_12_AT_2, abs=1e-15)


def test_kernel_eval_errors():
    spec = KernelSpec((1.0,))
    with pytest.raises(ValueError):
        kernel_eval(spec, [0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        kernel_eval(spec, [np.nan], [0.0])
    with pytest.raises(ValueError):
        KernelSpec((1.0, -2.0))
    with pytest.raises(ValueError):
        KernelSpec((math.inf,))
    with pytest.raises(ValueError):
        KernelSpec(())


def test_gram_matrix_examples():
    spec = KernelSpec((1.0,))
    assert gram_matrix(spec, [[0.0]], [[0.0]]).tolist() == [[1.0]]
    G = gram_matrix(spec, [[0.0], [1.0]], [[0.0]])
    assert G[0, 0] == 1.0
    assert G[1, 0] == pytest.approx(EXP_M_HALF, abs=1e-15)


def test_gram_matrix_matches_elementwise_loop(rng):
    spec = KernelSpec((0.3, 1.0, 2.5))
    A = rng.normal(size=(5, 3))
    B = rng.normal(size=(7, 3))
    G = gram_matrix(spec, A, B)
    loop = np.array([[kernel_eval(spec, a, b) for b in B] for a in A])
    assert G.shape == (5, 7)
    assert np.array_equal(G, loop)


def test_gram_matrix_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        gram_matrix(KernelSpec((1.0,)), np.zeros((2, 2)), np.zeros((2, 3)))


def test_induced_metric_examples():
    spec = KernelSpec((1.0,))
    assert induced_metric(spec, [0.3, 0.1], [0.3, 0.1]) == 0.0
    assert induced_metric(spec, [0.0], [1.0]) == pytest.approx(RHO_01, abs=1e-15)


def test_induced_distance_matrix(rng):
    spec = KernelSpec((0.5, 2.0))
    assert induced_distance_matrix(spec, [[1.0, 2.0]], [[1.0, 2.0]]).tolist() == [[0.0]]
    A = rng.normal(size=(6, 2))
    B = rng.normal(size=(4, 2))
    assert np.all(np.diag(induced_distance_matrix(spec, A, A)) == 0.0)
    D = induced_distance_matrix(spec, A, B)
    loop = np.array([[induced_metric(spec, a, b) for b in B] for a in A])
    assert np.array_equal(D, loop)


def test_induced_metric_triangle_inequality(rng):
    spec = KernelSpec((0.1, 0.5, 2.0))
    for _ in range(200):
        x, y, z = rng.normal(size=(3, 2))
        dxy = induced_metric(spec, x, y)
        assert dxy >= 0
        assert dxy == induced_metric(spec, y, x)
        assert dxy <= induced_metric(spec, x, z) + induced_metric(spec, z, y) + 1e-12
        assert induced_metric(spec, x, x) <= 1e-12


def test_gram_positive_semidefinite(rng):
    spec = KernelSpec(tuple(DEFAULT_MULTIPLIERS))
    A = rng.normal(size=(20, 2))
    eig = np.linalg.eigvalsh(gram_matrix(spec, A, A))
    assert eig.min() >= -1e-10


finite = st.floats(-50, 50, allow_nan=False)
bandwidths = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(bandwidths, st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3))
def test_kernel_symmetric_and_bounded(bw, x, y):
    spec = KernelSpec(tuple(bw))
    k = kernel_eval(spec, x, y)
    assert k == kernel_eval(spec, y, x)
    assert 0.0 <= k <= 1.0
    assert kernel_eval(spec, x, x) == 1.0


def test_median_bandwidths_examples():
    spec = median_bandwidths(np.array([[0.0], [1.0], [3.0]]), "euclidean", [1.0])
    assert spec.bandwidths == (2.0,)
    heart_like = np.random.default_rng(0).normal(size=(50, 2))
    spec = median_bandwidths(heart_like, multipliers=DEFAULT_MULTIPLIERS)
    assert len(spec) == 10
    assert median_bandwidths(np.ones((4, 2)), multipliers=[1.0, 2.0]).bandwidths == (1.0, 2.0)


def test_median_bandwidths_subsample_is_seeded(rng):
    cloud = rng.normal(size=(300, 2))
    a = median_bandwidths(cloud, multipliers=[1.0], subsample=50, seed=3)
    b = median_bandwidths(cloud, multipliers=[1.0], subsample=50, seed=3)
    c = median_bandwidths(cloud, multipliers=[1.0], subsample=50, seed=4)
    assert a == b
    assert a != c


def test_median_bandwidths_other_base_metric(rng):
    cloud = rng.normal(size=(30, 2))
    spec = KernelSpec((1.0,))
    got = median_bandwidths(cloud, KernelMetric(spec), [1.0])
    D = induced_distance_matrix(spec, cloud, cloud)
    assert got.bandwidths[0] == pytest.approx(np.median(D[np.triu_indices(30, 1)]))


def test_median_bandwidths_errors():
    with pytest.raises(ValueError):
        median_bandwidths(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        median_bandwidths(np.zeros((3, 2)), multipliers=[])


@pytest.mark.parametrize("metric", [EuclideanMetric(), KernelMetric(KernelSpec((0.5, 1.5)))])
def test_metric_gradient_coefficients(metric, rng):
    A = rng.normal(size=(3, 2))
    B = rng.normal(size=(4, 2))
    W = rng.normal(size=(3, 4))
    gA, gB = metric.vjp(A, B, W)
    fa = central_diff(lambda a: (W * metric.pairwise(a, B)).sum(), A)
    fb = central_diff(lambda b: (W * metric.pairwise(A, b)).sum(), B)
    assert rel_err(gA, fa) < 1e-6
    assert rel_err(gB, fb) < 1e-6
