"""The graph convolutional autoencoder and its latent parameter map."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import DenseLayer, MoNetKernel, skip_connect
from .sampling import knn_interpolation_matrix, make_pool_mask, pool, pool_size
from .seeding import child_rng

MLP_HIDDEN_LAYERS = 5


@dataclass
class ModelConfig:
    n_h: int
    d: int = 1
    P: int = 2
    r_t: float = 30.0
    pooling: bool = False
    r_p: float = 100.0
    ffn: int = 100
    n_l: int = 50
    n: int = 15
    lam: float = 10.0
    hcp: int = 3
    hcd: int = 1
    Q: int = 3
    k_unpool: int = 3
    pseudo_dim: int = 1
    monet_bias: bool = False
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 5000
    seed: int = 0
    batch: int = 0  # 0 means full batch
    components: Optional[tuple] = None  # field components to use; None keeps all

    def __post_init__(self):
        # coerce so 30 and 30.0 serialize identically
        for name in ("r_t", "r_p", "lam", "lr", "weight_decay"):
            setattr(self, name, float(getattr(self, name)))
        ints = ("n_h", "d", "P", "ffn", "n_l", "n", "hcp", "hcd", "Q", "k_unpool")
        for name in ints:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.r_t <= 100 or not 0 < self.r_p <= 100:
            raise ValueError("r_t and r_p must lie in (0, 100]")
        if self.lam < 0 or self.lr < 0 or self.weight_decay < 0 or self.epochs < 0 or self.batch < 0:
            raise ValueError("lambda, lr, weight_decay, epochs and batch must be non-negative")
        if self.pseudo_dim not in (1, 2):
            raise ValueError("pseudo_dim must be 1 or 2")
        if not self.pooling:
            self.r_p = 100.0
        if self.components is not None:
            self.components = tuple(int(c) for c in self.components)

    @property
    def pooled_nodes(self):
        return pool_size(self.n_h, self.r_p) if self.pooling else self.n_h

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)


_KEY_ALIASES = {"lambda": "lam", "n_b": "batch", "pooling_enabled": "pooling"}


def _parse_value(kind, text):
    text = text.strip()
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "components":
        if text.lower() in ("", "all", "none"):
            return None
        return tuple(int(c) for c in text.split(","))
    return kind(text)


def _field_kinds():
    kinds = {}
    for f in dataclasses.fields(ModelConfig):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        kinds[f.name] = {"int": int, "float": float, "bool": bool}.get(t, "components")
    return kinds


def config_from_text(text, **overrides):
    """Parse ``key = value`` lines (``#`` comments allowed) into a ModelConfig."""
    kinds = _field_kinds()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in kinds:
            raise KeyError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(kinds[key], val)
    values.update(overrides)
    return ModelConfig(**values)


def config_to_text(config):
    lines = []
    for key, val in config.as_dict().items():
        if key == "components":
            val = "all" if val is None else ",".join(str(c) for c in val)
        elif key == "lam":
            key = "lambda"
        lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
    return "\n".join(lines) + "\n"


def stack_fields(fields):
    """B x N x d snapshots to the N x (B*d) node-row layout."""
    fields = np.asarray(fields, dtype=np.float64)
    b, n, d = fields.shape
    return np.ascontiguousarray(fields.transpose(1, 0, 2)).reshape(n, b * d)


def unstack_fields(x, batch):
    n = x.shape[0]
    return np.ascontiguousarray(np.asarray(x).reshape(n, batch, -1).transpose(1, 0, 2))


def _nodes_to_rows(x, nodes, batch, d):
    return T.reshape(T.permute(T.reshape(x, (nodes, batch, d)), (1, 0, 2)), (batch, nodes * d))


def _rows_to_nodes(x, nodes, batch, d):
    return T.reshape(T.permute(T.reshape(x, (batch, nodes, d)), (1, 0, 2)), (nodes, batch * d))


class LossTerms(NamedTuple):
    total: T.Tensor
    mse: T.Tensor
    btt: T.Tensor


def combine_losses(mse, btt, lam):
    return mse + lam * btt


class GcaModel:
    """Encoder, decoder and parameter-map MLP for one mesh.

    Encoder: hcp MoNet layers (ELU) with a skip around the stack, optional
    mask pooling and hcd further MoNet layers, node-major flatten, then
    FC(ffn, ELU) and FC(n). The decoder mirrors it; its final MoNet layer has
    no activation so reconstructions can take any sign and magnitude.
    """

    def __init__(self, config, graph, mask=None):
        if graph.num_nodes != config.n_h:
            raise ShapeError(f"config expects {config.n_h} nodes, graph has {graph.num_nodes}")
        self.config = config
        self.graph = graph
        cfg = config
        rng = child_rng(cfg.seed, 1)
        d = cfg.d

        def conv(g):
            rng_range = (float(g.pseudo.min()), float(g.pseudo.max()))
            return MoNetKernel(d, d, cfg.Q, pseudo_dim=cfg.pseudo_dim, bias=cfg.monet_bias,
                               pseudo_range=rng_range, rng=rng)

        self.mask = None
        self.coarse = None
        self.interp = None
        if cfg.pooling:
            self.mask = mask if mask is not None else make_pool_mask(cfg.n_h, cfg.r_p, cfg.seed)
            if self.mask.kept.size != cfg.pooled_nodes:
                raise ShapeError("pool mask size does not match the configured pooling rate")
            self.coarse = pool(graph, self.mask)
            self.interp = knn_interpolation_matrix(self.coarse.positions, graph.positions, cfg.k_unpool)

        m = cfg.pooled_nodes
        self.enc_convs = [conv(graph) for _ in range(cfg.hcp)]
        self.enc_post = [conv(self.coarse) for _ in range(cfg.hcd)] if cfg.pooling else []
        self.enc_fc = [DenseLayer(m * d, cfg.ffn, "elu", rng=rng), DenseLayer(cfg.ffn, cfg.n, "identity", rng=rng)]
        self.dec_fc = [DenseLayer(cfg.n, cfg.ffn, "identity", rng=rng), DenseLayer(cfg.ffn, m * d, "elu", rng=rng)]
        self.dec_post = [conv(self.coarse) for _ in range(cfg.hcd)] if cfg.pooling else []
        self.dec_convs = [conv(graph) for _ in range(cfg.hcp)]
        widths = [cfg.P] + [cfg.n_l] * MLP_HIDDEN_LAYERS
        self.mlp = [DenseLayer(a, b, "tanh", rng=rng) for a, b in zip(widths[:-1], widths[1:])]
        self.mlp.append(DenseLayer(cfg.n_l, cfg.n, "identity", rng=rng))
        self._check_symmetry()

    def _check_symmetry(self):
        for enc, dec in zip(self.enc_fc, reversed(self.dec_fc)):
            assert enc.shape == dec.shape[::-1], "decoder FC is not the mirror of the encoder FC"
        assert len(self.enc_convs) == len(self.dec_convs) and len(self.enc_post) == len(self.dec_post)

    # -- parameters ---------------------------------------------------------
    def blocks(self):
        return {"enc_convs": self.enc_convs, "enc_post": self.enc_post, "enc_fc": self.enc_fc,
                "dec_fc": self.dec_fc, "dec_post": self.dec_post, "dec_convs": self.dec_convs,
                "mlp": self.mlp}

    def named_params(self):
        out = {}
        for block, layers in self.blocks().items():
            for i, layer in enumerate(layers):
                for name, p in layer.named_params().items():
                    out[f"{block}.{i}.{name}"] = p
        return out

    def params(self):
        return list(self.named_params().values())

    def num_params(self):
        return sum(p.size for p in self.params())

    # -- forward ------------------------------------------------------------
    def _batch_of(self, u):
        rows, cols = u.shape
        if rows != self.config.n_h or cols % self.config.d:
            raise ShapeError(f"expected {self.config.n_h} x (B*{self.config.d}) features, got {u.shape}")
        return cols // self.config.d

    def conv_stack(self, u, batch=None):
        """Pre-pooling MoNet stack with the skip connection (permutation-equivariant part)."""
        u = T.as_tensor(u)
        batch = self._batch_of(u) if batch is None else batch
        x = u
        for conv in self.enc_convs:
            x = T.elu(conv(x, self.graph, batch))
        return skip_connect(u, x)

    def encode(self, u):
        """N_h x (B*d) normalized fields -> B x n latent codes."""
        u = T.as_tensor(u)
        batch = self._batch_of(u)
        x = self.conv_stack(u, batch)
        nodes = self.config.n_h
        if self.config.pooling:
            x = T.gather(x, self.mask.kept)
            nodes = self.mask.kept.size
            for conv in self.enc_post:
                x = T.elu(conv(x, self.coarse, batch))
        x = _nodes_to_rows(x, nodes, batch, self.config.d)
        for layer in self.enc_fc:
            x = layer(x)
        return x

    def decode(self, z):
        """B x n latent codes -> N_h x (B*d) normalized fields."""
        z = T.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.config.n:
            raise ShapeError(f"latent codes must be B x {self.config.n}, got {z.shape}")
        batch = z.shape[0]
        x = z
        for layer in self.dec_fc:
            x = layer(x)
        nodes = self.config.pooled_nodes
        x = _rows_to_nodes(x, nodes, batch, self.config.d)
        if self.config.pooling:
            for conv in self.dec_post:
                x = T.elu(conv(x, self.coarse, batch))
            x = T.sparse_matmul(self.interp, x)
        y = x
        last = len(self.dec_convs) - 1
        for i, conv in enumerate(self.dec_convs):
            y = conv(y, self.graph, batch)
            if i < last:
                y = T.elu(y)
        return skip_connect(x, y)

    def latent_map(self, mu):
        """B x P scaled parameters -> B x n latent codes."""
        mu = mu if isinstance(mu, T.Tensor) else T.Tensor(np.atleast_2d(mu))
        if mu.shape[1] != self.config.P:
            raise ShapeError(f"parameters must have {self.config.P} components, got {mu.shape[1]}")
        x = mu
        for layer in self.mlp:
            x = layer(x)
        return x

    def reconstruct(self, u):
        return self.decode(self.encode(u))

    def predict(self, mu):
        """Online evaluation: parameters -> normalized fields, N_h x (B*d)."""
        return self.decode(self.latent_map(mu))


def loss_total(model, mu, u):
    """L_MSE + lambda * L_BTT for a batch; both terms are per-sample mean squared 2-norms."""
    u = T.as_tensor(u)
    batch = u.shape[1] // model.config.d
    if batch == 0:
        raise ValueError("empty batch")
    z = model.encode(u)
    mse = T.scale(T.sum_squares(T.sub(model.decode(z), u)), 1.0 / batch)
    btt = T.scale(T.sum_squares(T.sub(model.latent_map(mu), z)), 1.0 / batch)
    total = T.add(mse, T.scale(btt, model.config.lam))
    return LossTerms(total, mse, btt)


def _dense_count(a, b):
    return a * b + b


def count_parameters(config):
    """Trainable parameter count of the model ``config`` describes, with a per-block breakdown."""
    d, q, dim = config.d, config.Q, config.pseudo_dim
    conv = q * (2 * dim + d * d) + (d if config.monet_bias else 0)
    m = config.pooled_nodes
    post = config.hcd if config.pooling else 0
    widths = [config.P] + [config.n_l] * MLP_HIDDEN_LAYERS
    breakdown = {
        "enc_convs": config.hcp * conv,
        "enc_post": post * conv,
        "enc_fc": _dense_count(m * d, config.ffn) + _dense_count(config.ffn, config.n),
        "dec_fc": _dense_count(config.n, config.ffn) + _dense_count(config.ffn, m * d),
        "dec_post": post * conv,
        "dec_convs": config.hcp * conv,
        "mlp": sum(_dense_count(a, b) for a, b in zip(widths[:-1], widths[1:])) + _dense_count(config.n_l, config.n),
    }
    return sum(breakdown.values()), breakdown
