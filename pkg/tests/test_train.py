import dataclasses

import numpy as np
import pytest

from gmmd.distortion import delta_with_grads
from gmmd.kernels import KernelSpec
from gmmd.nnmap import AdamState, adam_step, affine_map, identity_map, map_backward, map_forward, mlp_init
from gmmd.shapes import rotation_matrix, sample_circle
from gmmd.train import (
    GmmdConfig,
    KernelPair,
    LossBreakdown,
    TrainingDiverged,
    fit_kernels,
    gmmd_loss,
    gmmd_loss_grads,
    loss_and_grads,
    loss_continuity_probe,
    loss_from_images,
    metrics_for,
    train,
)

KS = KernelSpec((0.1, 0.5, 2.0))


def cfg(**kw):
    base = dict(lambda_x=0.3, lambda_y=0.7, epochs=1, batch_size=8, hidden_dims=(4,))
    base.update(kw)
    return GmmdConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        GmmdConfig(lr=0)
    with pytest.raises(ValueError):
        GmmdConfig(mmd_power=3)
    with pytest.raises(ValueError):
        GmmdConfig(metric_mode="cosine")
    with pytest.raises(KeyError, match="lamda_x"):
        GmmdConfig.from_dict({"lamda_x": 1.0})
    c = GmmdConfig.from_dict(GmmdConfig(seed=3).to_dict())
    assert c == GmmdConfig(seed=3)


def test_identity_on_identical_clouds_gives_zero(rng):
    X = rng.normal(size=(12, 2))
    c = cfg()
    loss, _ = gmmd_loss(X, X, identity_map(2), identity_map(2), KS, KS, c)
    assert loss.total <= 1e-10


def test_planted_rotation_pair(rng):
    X = rng.normal(size=(15, 2))
    R = rotation_matrix(np.pi / 3)
    Y = X @ R.T
    c = cfg(metric_mode="euclidean")
    loss, _ = gmmd_loss(X, Y, affine_map(R), affine_map(R.T), KS, KS, c)
    assert loss.delta_x <= 1e-12 and loss.delta_y <= 1e-12 and loss.delta_xy <= 1e-12
    assert loss.mmd_x <= 1e-7 and loss.mmd_y <= 1e-7


def test_total_matches_components(rng):
    X = rng.normal(size=(7, 2))
    Y = rng.normal(size=(9, 3))
    c = cfg()
    f = mlp_init(2, [5], 3, seed=0)
    g = mlp_init(3, [5], 2, seed=1)
    loss, caches = gmmd_loss(X, Y, f, g, KS, KS, c)
    expect = c.lambda_x * loss.mmd_x + c.lambda_y * loss.mmd_y + loss.delta
    assert loss.total == pytest.approx(expect, abs=1e-12)
    assert np.array_equal(caches.FX, f(X))
    loss2, _, _ = loss_and_grads(X, Y, f, g, KS, KS, c)
    for a, b in zip(loss.as_tuple(), loss2.as_tuple()):
        assert a == pytest.approx(b, abs=1e-12)


def test_identity_models_reproduce_raw_loss(rng):
    X = rng.normal(size=(6, 2))
    Y = rng.normal(size=(5, 2))
    c = cfg()
    loss, _ = gmmd_loss(X, Y, identity_map(2), identity_map(2), KS, KS, c)
    assert loss == loss_from_images(X, Y, X, Y, KS, KS, c)


def test_swap_symmetry(rng):
    X = rng.normal(size=(8, 2))
    Y = rng.normal(size=(6, 3))
    kx, ky = KernelSpec((0.5, 1.0)), KernelSpec((0.3, 2.0))
    f = mlp_init(2, [6], 3, seed=0)
    g = mlp_init(3, [6], 2, seed=1)
    a, _ = gmmd_loss(X, Y, f, g, kx, ky, cfg(lambda_x=0.2, lambda_y=0.9))
    b, _ = gmmd_loss(Y, X, g, f, ky, kx, cfg(lambda_x=0.9, lambda_y=0.2))
    assert a.mmd_x == pytest.approx(b.mmd_y, abs=1e-14)
    assert a.mmd_y == pytest.approx(b.mmd_x, abs=1e-14)
    assert a.delta_x == pytest.approx(b.delta_y, abs=1e-14)
    assert a.delta_xy == pytest.approx(b.delta_xy, abs=1e-14)
    assert a.total == pytest.approx(b.total, abs=1e-13)


def test_stationarity_at_zero_loss(rng):
    X = rng.normal(size=(10, 2))
    f = affine_map(np.eye(2))
    g = affine_map(np.eye(2))
    gf, gg = gmmd_loss_grads(X, X, f, g, KS, KS, cfg())
    norm = np.sqrt(sum((W ** 2).sum() + (b ** 2).sum() for W, b in gf + gg))
    assert norm <= 1e-8
    f2, _ = adam_step(AdamState.zeros_like(f), f, gf, lr=1e-3)
    assert np.array_equal(f2.layers[0][0], f.layers[0][0])
    assert np.array_equal(f2.layers[0][1], f.layers[0][1])


def test_lambda_x_zero_removes_mmd_x_from_g(rng):
    X = rng.normal(size=(6, 2))
    Y = rng.normal(size=(6, 2)) + 1.0
    f = mlp_init(2, [5], 2, seed=0)
    g = mlp_init(2, [5], 2, seed=1)
    c0 = cfg(lambda_x=0.0)
    c1 = cfg(lambda_x=0.5)
    _, gg0 = gmmd_loss_grads(X, Y, f, g, KS, KS, c0)
    _, gg1 = gmmd_loss_grads(X, Y, f, g, KS, KS, c1)
    # independent route: distortion-only gradient pushed through g
    dX, dY = metrics_for(c0, KS, KS)
    FX, _ = map_forward(f, X)
    GY, cache_g = map_forward(g, Y)
    _, _, d_gy = delta_with_grads(dX, dY, X, Y, FX, GY)
    expect = map_backward(g, cache_g, d_gy)
    for (W0, b0), (We, be) in zip(gg0, expect):
        np.testing.assert_allclose(W0, We, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(b0, be, rtol=1e-12, atol=1e-15)
    assert any(not np.allclose(W0, W1) for (W0, _), (W1, _) in zip(gg0, gg1))


def test_train_epochs_zero_returns_init():
    X = sample_circle(8)
    c = cfg(epochs=0)
    f, g, hist = train(X, X, c)
    f0 = mlp_init(2, c.hidden_dims, 2, seed=0)
    assert len(hist) == 0
    assert f.n_params == f0.n_params


def test_train_circle_decreases_loss_and_is_deterministic():
    X = sample_circle(16)
    c = GmmdConfig(lambda_x=0.064, lambda_y=0.064, lr=1e-3, epochs=200, batch_size=16, seed=0)
    k = fit_kernels(X, X, c)
    f, g, hist = train(X, X, c, kernels=k)
    assert len(hist) == 200
    assert hist.losses[-1].total < hist.losses[0].total
    assert hist.losses[-1].total < 0.2
    for L in hist.losses:
        assert L.total == pytest.approx(
            c.lambda_x * L.mmd_x + c.lambda_y * L.mmd_y + L.delta_x + L.delta_y + L.delta_xy, abs=1e-12)
    _, _, hist2 = train(X, X, c, kernels=k)
    assert [L.as_tuple() for L in hist.losses] == [L.as_tuple() for L in hist2.losses]


def test_train_unequal_sizes_and_clipping(rng):
    X = rng.normal(size=(10, 2))
    Y = rng.normal(size=(4, 3))
    c = cfg(epochs=2, batch_size=6)
    with pytest.warns(UserWarning, match="clipping"):
        f, g, hist = train(X, Y, c)
    assert len(hist) == 2
    assert f(X).shape == (10, 3)
    assert g(Y).shape == (4, 2)


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train(np.zeros((0, 2)), np.zeros((3, 2)), cfg())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_aborts_on_nan():
    X = sample_circle(8)
    f = mlp_init(2, [4], 2, seed=0)
    f.layers[0][0][0, 0] = 1e300
    f.layers[1][0][:] = 1e300
    with pytest.raises(TrainingDiverged) as info:
        train(X, X, cfg(epochs=3), init=(f, mlp_init(2, [4], 2, seed=1)))
    assert info.value.epoch == 0


def test_continuity_probe_on_circle():
    # multipliers kept >= 0.25: narrower kernels saturate for shifts of 1e-3 and
    # the deviation plateaus instead of shrinking
    X = sample_circle(16)
    c = GmmdConfig(lambda_x=0.064, lambda_y=0.064, bandwidth_multipliers=(0.25, 1.0, 4.0))
    k = fit_kernels(X, X, c)
    rows = loss_continuity_probe(identity_map(2), identity_map(2), X, X, k,
                                 [0.0, 1e-2, 5e-3, 2.5e-3], c)
    assert rows[0][1] == 0.0
    devs = [r[1] for r in rows[1:]]
    for a, b in zip(devs, devs[1:]):
        assert b <= 0.75 * a + 1e-9
    for delta, dev, bound in rows:
        assert dev <= bound + 1e-12


def kink_free_draws(mode, count, margin=1e-3):
    """Seeded 2-4-2 / 2-4-2 pairs on batches of 5 away from every nondifferentiable point."""
    from oracles import distortion_kink_margin, relu_kink_margin

    seed = 0
    while count:
        rng = np.random.default_rng(seed)
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        c = cfg(metric_mode=mode)
        k = fit_kernels(X, Y, c)
        f, g = mlp_init(2, [4], 2, seed=100 + seed), mlp_init(2, [4], 2, seed=200 + seed)
        dX, dY = metrics_for(c, k.kx, k.ky)
        seed += 1
        if min(relu_kink_margin(f, X), relu_kink_margin(g, Y),
               distortion_kink_margin(dX, dY, X, Y, f(X), g(Y))) < margin:
            continue
        count -= 1
        yield X, Y, f, g, k, c


@pytest.mark.parametrize("mode", ["kernel_induced", "euclidean"])
def test_parameter_gradients_match_finite_differences(mode):
    from oracles import elementwise_rel_err, param_gradient_pairs

    checked = 0
    for X, Y, f, g, k, c in kink_free_draws(mode, 3):
        a, n = param_gradient_pairs(X, Y, f, g, k.kx, k.ky, c)
        assert elementwise_rel_err(a, n).max() <= 1e-4
        checked += a.size
    assert checked == 3 * 44
