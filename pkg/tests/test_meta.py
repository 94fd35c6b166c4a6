import numpy as np
import pytest

from pdefuncta import autodiff as ad
from pdefuncta.autodiff import NonFiniteError
from pdefuncta.basis import BasisConfig
from pdefuncta.data import FieldSample, convection_time_mask, gen_convection
from pdefuncta.inr import InrConfig
from pdefuncta.meta import Functaset, FunctaModel, TrainConfig, fit_latent, inner_adapt, outer_step, train


def tiny_model(kind="gfm", seed=0):
    cfg = InrConfig(hidden_dim=16, num_hidden_layers=2, modulation=kind, basis=BasisConfig(2, 4, 2, 16), latent_dim=4, map_hidden=16)
    return FunctaModel(cfg, seed=seed)


@pytest.fixture(scope="module")
def data():
    return gen_convection([1, 2, 3, 4], nx=12, nt=8)


def snapshot(model):
    return [p.data.copy() for p in model.parameters()]


def same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


class Quadratic:
    """Surrogate with loss |z - c|^2 and no network weights."""

    latent_dim = 3

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def parameters(self):
        return []

    def sample_loss(self, z, sample):
        d = z - self.c
        return ad.sum(d * d), 0.0


class _Id:
    id = "q"


def test_functaset_starts_at_zero():
    fs = Functaset(5, ["a", "b"])
    assert all(not fs[k].any() for k in fs.ids())
    with pytest.raises(KeyError):
        fs["missing"]


def test_inner_step_on_quadratic_surrogate():
    c = np.array([1.0, -2.0, 0.5])
    fs = Functaset(3, ["q"])
    res = inner_adapt(Quadratic(c), fs, _Id(), steps=1, eta_inner=0.1)
    assert np.allclose(res.latent, 2 * 0.1 * c, rtol=0, atol=1e-15)


def test_zero_inner_rate_keeps_latent(data):
    model, fs = tiny_model(), Functaset(4, [data[0].id])
    fs[data[0].id] = np.full(4, 0.3)
    res = inner_adapt(model, fs, data[0], steps=2, eta_inner=0.0)
    assert np.array_equal(fs[data[0].id], np.full(4, 0.3))
    assert res.losses[0] == res.losses[1]


def test_inner_loss_decreases_on_smooth_target():
    sample = gen_convection([1], nx=16, nt=8)[0]
    model = tiny_model("shift")
    fs = Functaset(4, [sample.id])
    res = inner_adapt(model, fs, sample, steps=4, eta_inner=0.01)
    assert all(b < a for a, b in zip(res.losses, res.losses[1:]))


def test_inner_loop_never_touches_weights(data):
    model, fs = tiny_model(), Functaset(4, [s.id for s in data])
    before = snapshot(model)
    inner_adapt(model, fs, data[1], steps=3, eta_inner=0.01)
    assert same(before, snapshot(model))


def test_outer_step_never_touches_latents_and_zero_rate_is_a_no_op(data):
    model, fs = tiny_model(), Functaset(4, [s.id for s in data])
    fs[data[0].id] = np.arange(4.0)
    lat = fs.copy()
    before = snapshot(model)
    outer_step(model, fs, data[:2], eta_outer=0.0)
    assert same(before, snapshot(model))
    outer_step(model, fs, data[:2], eta_outer=1e-3)
    assert not same(before, snapshot(model))
    assert all(np.array_equal(fs[k], lat[k]) for k in fs.ids())


def test_outer_loss_of_single_sample_batch(data):
    model, fs = tiny_model(), Functaset(4, [s.id for s in data])
    expected = model.field_loss(ad.as_tensor(fs[data[2].id]), data[2]).item()
    assert outer_step(model, fs, [data[2]], eta_outer=0.0).loss == expected


def test_outer_steps_reduce_loss(data):
    model, fs = tiny_model("shift"), Functaset(4, [s.id for s in data])
    first = outer_step(model, fs, data, eta_outer=1e-3).loss
    for _ in range(49):
        last = outer_step(model, fs, data, eta_outer=1e-3).loss
    assert last < first


def test_zero_epochs_is_empty(data):
    model, fs = tiny_model(), Functaset(4)
    before = snapshot(model)
    assert train(model, fs, data, TrainConfig(epochs=0)) == []
    assert same(before, snapshot(model))


def test_training_is_deterministic(data):
    runs = []
    for _ in range(2):
        model, fs = tiny_model(seed=3), Functaset(4)
        train(model, fs, data, TrainConfig(epochs=3, batch_size=2, seed=9, outer_optimizer="adam", eta_outer=1e-3))
        runs.append((snapshot(model), fs))
    assert same(runs[0][0], runs[1][0])
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1].ids())


def test_latents_persist_across_epochs(data):
    model, fs = tiny_model(), Functaset(4)
    seen = {}
    train(model, fs, data, TrainConfig(epochs=2, batch_size=4, eta_inner=0.01),
          on_epoch=lambda e, log: seen.setdefault(e, fs.copy()))
    assert all(seen[0][k].any() for k in fs.ids())
    assert all(not np.array_equal(seen[0][k], seen[1][k]) for k in fs.ids())


def test_subset_k_adapts_only_k_per_batch(data):
    model, fs = tiny_model(), Functaset(4)
    train(model, fs, data, TrainConfig(epochs=1, batch_size=4, inner_k=1))
    assert sum(bool(fs[k].any()) for k in fs.ids()) == 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=4, inner_k=5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_non_finite_inner_loss_names_sample_and_step(data):
    bad = FieldSample("broken", data[0].coords, np.full(data[0].num_points, 1e300), data[0].grid_dims)
    model, fs = tiny_model(), Functaset(4, ["broken"])
    with pytest.raises(NonFiniteError, match=r"'broken' step 0"):
        inner_adapt(model, fs, bad, steps=1)


def test_fit_latent_zero_steps_returns_init(data):
    init = np.array([0.1, 0.2, 0.3, 0.4])
    res = fit_latent(tiny_model(), data[0], init=init, steps=0)
    assert np.array_equal(res.latent, init)


def test_fit_latent_masked_objective_ignores_hidden_values(data):
    s = data[1]
    mask = convection_time_mask(s, 0.0, 0.5)
    corrupted = FieldSample(s.id, s.coords, np.where(mask[:, None], s.values, 1e3), s.grid_dims)
    model = tiny_model()
    a = fit_latent(model, s, steps=5, coordinate_mask=mask)
    b = fit_latent(model, corrupted, steps=5, coordinate_mask=lambda f: convection_time_mask(f, 0.0, 0.5))
    assert np.array_equal(a.latent, b.latent)
    assert a.mse_observed == b.mse_observed
    assert a.mse_full != b.mse_full


def test_fit_from_stored_latent_reproduces_training_error(data):
    model, fs = tiny_model("shift", seed=1), Functaset(4)
    train(model, fs, data, TrainConfig(epochs=15, batch_size=1, eta_outer=1e-3, outer_optimizer="adam"))
    s = data[2]
    train_mse = model.field_loss(ad.as_tensor(fs[s.id]), s).item()
    res = fit_latent(model, s, init=fs[s.id], steps=100, eta=0.01)
    assert res.mse_full <= 1.1 * train_mse


def test_fit_latent_loss_weight_scales_the_sgd_step(data):
    model = tiny_model()
    a = fit_latent(model, data[0], steps=5, eta=0.01, loss_weight=4.0)
    b = fit_latent(model, data[0], steps=5, eta=0.04)
    np.testing.assert_allclose(a.latent, b.latent, rtol=1e-12, atol=1e-15)
    assert a.losses[0] == b.losses[0]  # recorded losses are unweighted
