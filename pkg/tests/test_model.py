import numpy as np
import pytest
from conftest import check_grads

from gcarom import tensor as T
from gcarom.errors import ShapeError
from gcarom.graph import build_graph, permute_nodes, permute_rows
from gcarom.layers import DenseLayer, MoNetKernel
from gcarom.model import (GcaModel, ModelConfig, combine_losses, config_from_text, config_to_text,
                          count_parameters, loss_total, stack_fields, unstack_fields)
from gcarom.synthetic import generate_mesh
from gcarom.tensor import Tensor

# tiny meshes pooled at 60% can fall apart; that path only warns
pytestmark = pytest.mark.filterwarnings("ignore:pooled graph is disconnected")


def small_model(pooling=False, d=1, seed=0, **kw):
    mesh = generate_mesh(4, 0.2, seed=1)
    sizes = dict(ffn=8, n_l=6, n=3, hcp=2)
    sizes.update(kw)
    cfg = ModelConfig(n_h=mesh.num_nodes, d=d, pooling=pooling, r_p=60 if pooling else 100, seed=seed, **sizes)
    return GcaModel(cfg, build_graph(mesh))


def fields(model, b, seed=0):
    return np.random.default_rng(seed).normal(size=(b, model.config.n_h, model.config.d))


def test_stack_unstack_round_trip():
    f = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
    x = stack_fields(f)
    assert x.shape == (3, 4)
    np.testing.assert_array_equal(x[1], [2, 3, 8, 9])  # node 1: sample 0 channels, then sample 1
    np.testing.assert_array_equal(unstack_fields(x, 2), f)


@pytest.mark.parametrize("pooling", [False, True])
def test_shapes(pooling):
    m = small_model(pooling, d=2)
    u = stack_fields(fields(m, 3))
    z = m.encode(u)
    assert z.shape == (3, m.config.n)
    assert m.decode(z).shape == (m.config.n_h, 3 * 2)
    assert m.latent_map(np.zeros((3, 2))).shape == (3, m.config.n)


def test_zero_input_finite_and_deterministic():
    a, b = small_model(), small_model()
    za = a.encode(np.zeros((a.config.n_h, 1))).data
    zb = b.encode(np.zeros((b.config.n_h, 1))).data
    assert np.all(np.isfinite(za)) and za.tobytes() == zb.tobytes()
    # zero biases: a zero input stays zero through the whole encoder
    np.testing.assert_array_equal(za, 0.0)


def test_zero_latent_bit_stable():
    a, b = small_model(True), small_model(True)
    assert a.decode(np.zeros((1, 3))).data.tobytes() == b.decode(np.zeros((1, 3))).data.tobytes()


def test_seed_changes_weights():
    a, b = small_model(seed=0), small_model(seed=1)
    assert not np.array_equal(a.enc_fc[0].weight.data, b.enc_fc[0].weight.data)


def test_shape_errors():
    m = small_model()
    with pytest.raises(ShapeError):
        m.encode(np.zeros((m.config.n_h + 1, 1)))
    with pytest.raises(ShapeError):
        m.decode(np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        m.latent_map(np.zeros((1, 3)))


def test_batched_encode_matches_single():
    m = small_model(True, d=2)
    f = fields(m, 3, seed=2)
    z = m.encode(stack_fields(f)).data
    for i in range(3):
        np.testing.assert_allclose(z[i], m.encode(stack_fields(f[i:i + 1])).data[0], rtol=1e-12, atol=1e-14)


def test_conv_stack_equivariant():
    m = small_model(d=2)
    h = fields(m, 1, seed=3)[0]
    base = m.conv_stack(h).data
    perm = np.random.default_rng(4).permutation(m.config.n_h)
    pm = GcaModel(m.config, permute_nodes(m.graph, perm))
    for src, dst in zip(m.enc_convs, pm.enc_convs):
        for p, q in zip(src.params(), dst.params()):
            q.data[...] = p.data
    out = pm.conv_stack(permute_rows(h, perm)).data
    assert np.max(np.abs(out - permute_rows(base, perm))) < 1e-10


def test_mirror_symmetry():
    m = small_model(True)
    assert [l.shape for l in m.enc_fc] == [l.shape[::-1] for l in reversed(m.dec_fc)]
    assert m.enc_fc[0].shape[0] == m.config.pooled_nodes * m.config.d


def test_latent_map_continuous_and_repeatable():
    m = small_model()
    mu = np.array([[0.3, -0.2]])
    a, b = m.latent_map(mu).data, m.latent_map(mu + 1e-6).data
    assert np.max(np.abs(a - b)) < 1e-4
    assert a.tobytes() == m.latent_map(mu).data.tobytes()


def test_mlp_structure():
    m = small_model()
    assert [l.activation for l in m.mlp] == ["tanh"] * 5 + ["identity"]
    assert m.mlp[0].shape == (2, 6) and m.mlp[-1].shape == (6, 3)


def test_combine_losses_arithmetic():
    assert combine_losses(1.0, 0.5, 10.0) == 6.0
    assert combine_losses(1.0, 0.5, 0.0) == 1.0


def test_loss_lambda_zero_is_mse():
    m = small_model(lam=0.0)
    u = stack_fields(fields(m, 2))
    terms = loss_total(m, Tensor(np.zeros((2, 2))), u)
    assert terms.total.item() == terms.mse.item()
    assert terms.mse.item() >= 0 and terms.btt.item() >= 0


def test_loss_matches_numpy_formula():
    m = small_model(lam=10.0)
    f = fields(m, 3, seed=5)
    mu = np.random.default_rng(6).uniform(-1, 1, size=(3, 2))
    terms = loss_total(m, Tensor(mu), stack_fields(f))
    rec = unstack_fields(m.reconstruct(stack_fields(f)).data, 3)
    z = m.encode(stack_fields(f)).data
    mse = np.mean([np.sum((rec[i] - f[i]) ** 2) for i in range(3)])
    btt = np.mean([np.sum((m.latent_map(mu[i:i + 1]).data - z[i]) ** 2) for i in range(3)])
    np.testing.assert_allclose([terms.mse.item(), terms.btt.item(), terms.total.item()],
                               [mse, btt, mse + 10 * btt], rtol=1e-12)


def test_loss_zero_for_perfect_model():
    # zero weights everywhere: decoder returns its input skip path from zero, encoder gives zero codes
    m = small_model()
    for p in m.params():
        p.data[...] = 0.0
    terms = loss_total(m, Tensor(np.zeros((1, 2))), np.zeros((m.config.n_h, 1)))
    assert terms.total.item() == 0.0


def test_loss_empty_batch():
    m = small_model()
    with pytest.raises(ValueError):
        loss_total(m, Tensor(np.zeros((0, 2))), np.zeros((m.config.n_h, 0)))


@pytest.mark.parametrize("pooling", [False, True])
def test_full_loss_gradient_fd(pooling):
    m = small_model(pooling, d=1, monet_bias=True, ffn=4, n_l=4)
    rng = np.random.default_rng(7)
    for p in m.params():
        p.data[...] += 0.05 * rng.normal(size=p.shape)
    u = stack_fields(fields(m, 2, seed=8))
    mu = Tensor(rng.uniform(-1, 1, size=(2, 2)))
    assert check_grads(lambda: loss_total(m, mu, u).total, m.params(), joint=True) < 1e-5


# -- parameter counting ----------------------------------------------------------------

def test_dense_count():
    assert DenseLayer(2, 3).num_params() == 9


def test_monet_count():
    assert MoNetKernel(1, 1, 3, pseudo_dim=1).num_params() == 9


@pytest.mark.parametrize("pooling", [False, True])
def test_count_matches_instantiated_model(pooling):
    m = small_model(pooling, d=2, monet_bias=True)
    total, breakdown = count_parameters(m.config)
    assert total == m.num_params() == sum(breakdown.values())
    for block, layers in m.blocks().items():
        assert breakdown[block] == sum(l.num_params() for l in layers)


def test_count_graetz_config():
    cfg = ModelConfig(n_h=5160, d=1, ffn=200, n=25, n_l=50, hcp=2, Q=3, pseudo_dim=1)
    total, _ = count_parameters(cfg)
    assert abs(total - 2088682) / 2088682 < 0.02


def test_count_is_pure():
    cfg = ModelConfig(n_h=100)
    assert count_parameters(cfg) == count_parameters(cfg)


# -- config ------------------------------------------------------------------------------

def test_config_text_round_trip():
    cfg = ModelConfig(n_h=50, d=2, pooling=True, r_p=70, lam=0.1, components=(1,), lr=3e-4)
    assert config_from_text(config_to_text(cfg)) == cfg


def test_config_aliases_and_comments():
    cfg = config_from_text("n_h = 10  # nodes\nlambda = 1\nn_b = 4\npooling_enabled = yes\nr_p = 50\n")
    assert cfg.lam == 1.0 and cfg.batch == 4 and cfg.pooling and cfg.r_p == 50


def test_config_unknown_key():
    with pytest.raises(KeyError, match="bogus"):
        config_from_text("n_h = 10\nbogus = 3\n")


@pytest.mark.parametrize("bad", [{"n": 0}, {"r_t": 0}, {"r_p": 101, "pooling": True}, {"Q": 0}, {"lam": -1}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(n_h=10, **bad)


def test_pooling_off_forces_full_rate():
    assert ModelConfig(n_h=10, r_p=50).r_p == 100
