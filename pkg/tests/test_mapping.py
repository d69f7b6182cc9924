import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp
from scipy.stats import special_ortho_group

from sagan.config import RunConfig, load_config
from sagan.dataio import SyntheticSpec, make_synthetic_dataset
from sagan.engine import Tape, Tensor, precision
from sagan.evaluation import structure_change
from sagan.mapping import (
    ConfigError,
    MappingConfig,
    MappingModel,
    loss_center,
    loss_cls,
    loss_sp,
    mapping_objective,
    row_distance,
    structure_distances,
    train_mapping,
)

SMALL = dict(hidden=16, d_m=8, epochs=2, batch_size=32, lr=1e-3)


# -- classification and center losses --------------------------------------------------

def test_cls_untrained_net_near_log_c():
    # second-order expansion around uniform logits: E[CE] ~ ln C + var(logits within a row) / 2
    for seed in range(3):
        rng = np.random.default_rng(seed)
        model = MappingModel(64, 20, MappingConfig(hidden=256, d_m=64), rng)
        x = rng.standard_normal((500, 64))
        logits = model.f_c(model.f_m(Tensor(x)))
        y = np.arange(500) % 20
        v = loss_cls(logits, y).item()
        z = logits.data.astype(np.float64)
        assert v == pytest.approx(float(np.mean(logsumexp(z, axis=1) - z[np.arange(500), y])), rel=1e-5)
        expected = math.log(20) + 0.5 * float(z.var(axis=1).mean())
        assert v == pytest.approx(expected, abs=0.1)


def test_cls_margin_and_uniform_cases():
    logits = np.full((3, 4), -5.0)
    logits[np.arange(3), [0, 2, 3]] = 5.0
    assert loss_cls(Tensor(logits), [0, 2, 3]).item() < 1e-3
    assert loss_cls(Tensor([[0.0, 0.0]]), [1]).item() == pytest.approx(math.log(2), rel=1e-6)


def test_center_loss_cases(rng):
    assert loss_center(Tensor([[1.0, 1.0]]), Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(2.0)
    c = rng.standard_normal((3, 4))
    y = np.array([0, 2, 1, 2])
    assert loss_center(Tensor(c[y]), Tensor(c), y).item() == pytest.approx(0.0, abs=1e-6)
    m = rng.standard_normal((4, 4))
    brute = sum(float(((m[i] - c[y[i]]) ** 2).sum()) for i in range(4)) / 4
    with precision("float64"):
        assert loss_center(Tensor(m), Tensor(c), y).item() == pytest.approx(brute, rel=1e-12)


# -- structure term --------------------------------------------------------------------

@pytest.mark.parametrize("metric", ["l1", "l2", "cosine"])
def test_identity_map_gives_zero(metric, rng):
    x, p = rng.standard_normal((8, 5)), rng.standard_normal((8, 5))
    with precision("float64"):
        assert loss_sp(Tensor(x), Tensor(p), structure_distances(x, p, metric), metric).item() <= 1e-10


@given(st.integers(2, 9), st.integers(0, 2 ** 31))
def test_orthogonal_map_gives_zero(d, seed):
    rng = np.random.default_rng(seed)
    q = special_ortho_group.rvs(d, random_state=seed) if d > 1 else np.eye(1)
    x, p = rng.standard_normal((10, d)), rng.standard_normal((10, d))
    with precision("float64"):
        assert loss_sp(Tensor(x @ q), Tensor(p @ q), structure_distances(x, p), "l2").item() <= 1e-10


def test_doubling_map_unit_distances():
    rng = np.random.default_rng(0)
    p = rng.standard_normal((6, 3))
    u = rng.standard_normal((6, 3))
    x = p + u / np.linalg.norm(u, axis=1, keepdims=True)
    with precision("float64"):
        v = loss_sp(Tensor(2 * x), Tensor(2 * p), structure_distances(x, p), "l2").item()
    assert v == pytest.approx(1.0, rel=1e-12)


def test_l1_one_dimensional_hand_case():
    x, c = np.array([[1.0], [4.0]]), np.array([[2.0], [2.0]])
    # |x - c| = [1, 2]; mapping by 3 gives [3, 6]; mean of [(1-3)^2, (2-6)^2] = 10
    with precision("float64"):
        assert loss_sp(Tensor(3 * x), Tensor(3 * c), structure_distances(x, c, "l1"), "l1").item() == pytest.approx(10.0)


def test_cosine_parallel_vectors_zero_distance():
    u = Tensor([[1.0, 2.0, -1.0]])
    assert row_distance(u, u * 7.5, "cosine").item() == pytest.approx(0.0, abs=1e-6)
    assert structure_distances(np.array([[1.0, 2.0]]), np.array([[3.0, 6.0]]), "cosine")[0] == pytest.approx(0.0)


def test_unknown_metric():
    with pytest.raises(ConfigError):
        structure_distances(np.ones((1, 2)), np.ones((1, 2)), "hamming")


def test_loss_sp_pulls_through_mapped_prototypes():
    """Gradient reaches f_m through both the samples and the mapped prototypes."""
    rng = np.random.default_rng(1)
    with precision("float64"):
        model = MappingModel(4, 2, MappingConfig(hidden=6, d_m=3), rng)
        x, p = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        d = structure_distances(x, p)
        with Tape() as t:
            full = loss_sp(model.f_m(Tensor(x)), model.f_m(Tensor(p)), d)
        g_full = t.gradient(full, [model.f_m.hidden.weight])[0].data
        with Tape() as t:
            frozen = loss_sp(model.f_m(Tensor(x)), Tensor(model.map(p)), d)
        g_frozen = t.gradient(frozen, [model.f_m.hidden.weight])[0].data
    assert not np.allclose(g_full, g_frozen)


# -- combined objective ------------------------------------------------------------------

def _tiny_objective_inputs(seed=0):
    rng = np.random.default_rng(seed)
    model = MappingModel(6, 3, MappingConfig(hidden=8, d_m=4), rng)
    model.centers.data[:] = rng.standard_normal(model.centers.shape)
    x, p = rng.standard_normal((5, 6)), rng.standard_normal((5, 6))
    return model, x, rng.integers(0, 3, 5), p, structure_distances(x, p)


def test_objective_is_weighted_sum():
    with precision("float64"):
        model, x, y, p, d = _tiny_objective_inputs()
        cfg = MappingConfig(gamma_c=0.3, gamma_s=2.5)
        parts = mapping_objective(model, x, y, p, d, cfg)
        mapped = model.f_m(Tensor(x))
        expected = (loss_cls(model.f_c(mapped), y).item() + 0.3 * loss_center(mapped, model.centers, y).item()
                    + 2.5 * loss_sp(mapped, model.f_m(Tensor(p)), d).item())
    assert parts.total.item() == pytest.approx(expected, rel=1e-12)


def test_objective_without_weights_is_cls():
    with precision("float64"):
        model, x, y, p, d = _tiny_objective_inputs(1)
        parts = mapping_objective(model, x, y, p, d, MappingConfig(gamma_c=0.0, gamma_s=0.0))
        assert parts.total.item() == parts.cls.item()


def test_config_validation():
    with pytest.raises(ConfigError):
        MappingConfig(gamma_s=-1).validate()
    with pytest.raises(ConfigError):
        MappingConfig(metric="chebyshev").validate()


# -- training ------------------------------------------------------------------------------

def test_zero_epochs_returns_initialization(tiny_ds):
    res = train_mapping(tiny_ds, MappingConfig(**{**SMALL, "epochs": 0}))
    assert res.trace == []
    np.testing.assert_array_equal(res.mapped_features, res.model.map(tiny_ds.features))
    np.testing.assert_array_equal(res.prototypes.mapped, res.model.map(res.prototypes.original))


def test_training_is_deterministic(tiny_ds):
    a = train_mapping(tiny_ds, MappingConfig(**SMALL, seed=5))
    b = train_mapping(tiny_ds, MappingConfig(**SMALL, seed=5))
    assert a.trace == b.trace
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def test_train_accuracy_above_90_percent_desk_profile():
    cfg = load_config("configs/desk.cfg")
    accs = []
    for seed in range(5):
        c = RunConfig(**{**cfg.as_dict(), "seed": seed})
        ds = make_synthetic_dataset(c.synthetic_spec())
        accs.append(train_mapping(ds, c.mapping_config()).train_accuracy)
    assert np.median(accs) > 0.9


def test_structure_change_zero_under_rotation():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 6))
    y = np.repeat(np.arange(3), 10)
    protos = np.stack([x[y == c].mean(0) for c in range(3)])
    q = special_ortho_group.rvs(6, random_state=1)
    rep = structure_change(x, protos[y], x @ q, (protos @ q)[y], y)
    assert rep.l2_change <= 1e-8 and rep.w_dist <= 1e-8
