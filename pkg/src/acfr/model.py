"""Networks for adversarial counterfactual regression.

Three sub-networks make up the full model: an encoder mapping covariates to a
representation z, a treatment predictor pi that tries to recover the dose
from z (the adversary), and an outcome head h. The default head attends from
the spline embedding of the dose (a single query token) over the
representation split into contiguous tokens (keys/values), then maps the
attended context through a small feedforward stack to a scalar outcome.

Two reference variants live here too: a head that simply concatenates z with
the spline embedding (the no-attention ablation) and a plain MLP on raw
(covariates, dose) input with no balancing at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .splines import SplineConfig, basis_matrix

METHODS = ("acfr", "acfr-no-attn", "mlp")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs shared by all variants.

    ``repr_dim`` must be divisible by ``tokens``: the representation is split
    into ``tokens`` contiguous chunks of size ``repr_dim // tokens`` that act
    as attention keys/values. ``freeze_query`` pins the query projection to a
    fixed identity-like matrix (recovers a varying-coefficient style head for
    regression testing) instead of training it.
    """

    input_dim: int
    method: str = "acfr"
    hidden_width: int = 100
    hidden_layers: int = 1
    repr_dim: int = 64
    attn_dim: int = 32
    value_dim: int = 32
    tokens: int = 8
    head_hidden: int = 16
    spline: SplineConfig = field(default_factory=SplineConfig)
    freeze_query: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        for name in ("hidden_width", "repr_dim", "attn_dim", "value_dim", "tokens",
                     "head_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if self.repr_dim % self.tokens != 0:
            raise ValueError(
                f"repr_dim {self.repr_dim} not divisible by tokens {self.tokens}"
            )

    @property
    def token_size(self) -> int:
        return self.repr_dim // self.tokens


@dataclass
class Layer:
    w: Tensor
    b: Tensor


@dataclass
class ModelParams:
    """All weights of one model variant; components unused by the variant are None."""

    config: ModelConfig
    encoder: list | None = None
    predictor: list | None = None
    w_q: Tensor | None = None
    w_k: Tensor | None = None
    w_v: Tensor | None = None
    head: list | None = None
    alt_head: list | None = None
    mlp: list | None = None

    def encoder_params(self) -> list:
        return _flatten_layers(self.encoder)

    def predictor_params(self) -> list:
        return _flatten_layers(self.predictor)

    def outcome_params(self) -> list:
        """Trainable parameters of the outcome head h for this variant."""
        if self.config.method == "acfr":
            attn = [] if self.config.freeze_query else [self.w_q]
            return attn + [self.w_k, self.w_v] + _flatten_layers(self.head)
        if self.config.method == "acfr-no-attn":
            return _flatten_layers(self.alt_head)
        return _flatten_layers(self.mlp)

    def all_params(self) -> list:
        out = []
        for group in (self.encoder_params(), self.predictor_params(), self.outcome_params()):
            out.extend(group)
        return out

    def named_arrays(self) -> dict:
        """Flat name -> ndarray view of every weight, for checkpoints."""
        named = {}
        for group_name, layers in (("encoder", self.encoder), ("predictor", self.predictor),
                                   ("head", self.head), ("alt_head", self.alt_head),
                                   ("mlp", self.mlp)):
            if layers is None:
                continue
            for i, layer in enumerate(layers):
                named[f"{group_name}.{i}.w"] = layer.w.data
                named[f"{group_name}.{i}.b"] = layer.b.data
        for name, t in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if t is not None:
                named[name] = t.data
        return named


def _flatten_layers(layers) -> list:
    if layers is None:
        return []
    out = []
    for layer in layers:
        out.append(layer.w)
        out.append(layer.b)
    return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _init_stack(rng, dims) -> list:
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        layers.append(Layer(
            w=Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True),
            b=Tensor(np.zeros(fan_out), requires_grad=True),
        ))
    return layers


def _identity_like(rows: int, cols: int) -> np.ndarray:
    out = np.zeros((rows, cols))
    for i in range(min(rows, cols)):
        out[i, i] = 1.0
    return out


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Deterministic Glorot-uniform weights, zero biases, per seed."""
    rng = np.random.default_rng(seed)
    params = ModelParams(config=cfg)
    hidden = [cfg.hidden_width] * cfg.hidden_layers
    m = cfg.spline.dim
    if cfg.method in ("acfr", "acfr-no-attn"):
        params.encoder = _init_stack(rng, [cfg.input_dim] + hidden + [cfg.repr_dim])
        params.predictor = _init_stack(rng, [cfg.repr_dim] + hidden + [1])
    if cfg.method == "acfr":
        if cfg.freeze_query:
            _glorot(rng, m, cfg.attn_dim)  # discard; keeps w_k/w_v/head draws seed-stable
            params.w_q = Tensor(_identity_like(m, cfg.attn_dim))
        else:
            params.w_q = Tensor(_glorot(rng, m, cfg.attn_dim), requires_grad=True)
        params.w_k = Tensor(_glorot(rng, cfg.token_size, cfg.attn_dim), requires_grad=True)
        params.w_v = Tensor(_glorot(rng, cfg.token_size, cfg.value_dim), requires_grad=True)
        params.head = _init_stack(rng, [cfg.value_dim, cfg.head_hidden, 1])
    elif cfg.method == "acfr-no-attn":
        params.alt_head = _init_stack(rng, [cfg.repr_dim + m, cfg.hidden_width, 1])
    else:
        params.mlp = _init_stack(rng, [cfg.input_dim + 1, cfg.hidden_width, 1])
    return params


def _feedforward(x: Tensor, layers, final_linear: bool = True) -> Tensor:
    out = x
    for i, layer in enumerate(layers):
        out = ad.add(ad.matmul(out, layer.w), layer.b)
        last = i == len(layers) - 1
        if not (last and final_linear):
            out = ad.relu(out)
    return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _validate_treatments(t: np.ndarray) -> None:
    if t.ndim != 1:
        raise ValueError(f"treatments must be a vector, got shape {t.shape}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError("treatments must lie in [0, 1]")


def encode(params: ModelParams, x) -> Tensor:
    """Representation z = phi(x); final layer is linear so z is unconstrained."""
    if params.encoder is None:
        raise ValueError(f"method {params.config.method!r} has no encoder")
    x = _lift(x)
    if x.data.shape[-1] != params.config.input_dim:
        raise ad.ShapeMismatchError(
            f"encode: expected {params.config.input_dim} covariates, got {x.data.shape}"
        )
    return _feedforward(x, params.encoder, final_linear=True)


def predict_treatment(params: ModelParams, z, predictor=None) -> Tensor:
    """Adversary's dose estimate per row of z, squashed into (0, 1)."""
    layers = predictor if predictor is not None else params.predictor
    if layers is None:
        raise ValueError(f"method {params.config.method!r} has no treatment predictor")
    z = _lift(z)
    if z.data.shape[-1] != params.config.repr_dim:
        raise ad.ShapeMismatchError(
            f"predict_treatment: expected width {params.config.repr_dim}, got {z.data.shape}"
        )
    raw = _feedforward(z, layers, final_linear=True)
    return ad.reshape(ad.sigmoid(raw), (z.data.shape[0],))


def attention_weights(params: ModelParams, z, t) -> np.ndarray:
    """Per-sample softmax weights over the representation tokens; (batch, tokens)."""
    _, weights = _attention_forward(params, _lift(z), np.asarray(t, dtype=np.float64))
    return weights.data.reshape(weights.data.shape[0], -1)


def _attention_forward(params: ModelParams, z: Tensor, t: np.ndarray):
    cfg = params.config
    _validate_treatments(t)
    batch = z.data.shape[0]
    if t.shape[0] != batch:
        raise ad.ShapeMismatchError(
            f"outcome head: {batch} representations but {t.shape[0]} treatments"
        )
    embed = Tensor(basis_matrix(t, cfg.spline))            # (batch, m)
    q = ad.matmul(embed, params.w_q)                       # (batch, d_k)
    tokens = ad.reshape(z, (batch, cfg.tokens, cfg.token_size))
    keys = ad.matmul(tokens, params.w_k)                   # (batch, n, d_k)
    values = ad.matmul(tokens, params.w_v)                 # (batch, n, d_v)
    q3 = ad.reshape(q, (batch, 1, cfg.attn_dim))
    logits = ad.mul(ad.matmul(q3, ad.transpose(keys)), 1.0 / math.sqrt(cfg.attn_dim))
    weights = ad.row_softmax(logits)                       # (batch, 1, n)
    context = ad.reshape(ad.matmul(weights, values), (batch, cfg.value_dim))
    return context, weights


def outcome_attention(params: ModelParams, z, t) -> Tensor:
    """Cross-attention outcome head; returns one predicted outcome per sample."""
    if params.config.method != "acfr":
        raise ValueError(f"method {params.config.method!r} has no attention head")
    z = _lift(z)
    t = np.asarray(t, dtype=np.float64)
    context, _ = _attention_forward(params, z, t)
    out = _feedforward(context, params.head, final_linear=True)
    return ad.reshape(out, (z.data.shape[0],))


def outcome_no_attention(params: ModelParams, z, t) -> Tensor:
    """Ablation head: concat(z, spline(t)) through one hidden layer."""
    if params.config.method != "acfr-no-attn":
        raise ValueError(f"method {params.config.method!r} has no concat head")
    z = _lift(z)
    t = np.asarray(t, dtype=np.float64)
    _validate_treatments(t)
    embed = Tensor(basis_matrix(t, params.config.spline))
    out = _feedforward(ad.concat([z, embed]), params.alt_head, final_linear=True)
    return ad.reshape(out, (z.data.shape[0],))


def mlp_baseline(params: ModelParams, x, t) -> Tensor:
    """Plain two-layer net on concat(covariates, dose); no balancing anywhere."""
    if params.mlp is None:
        raise ValueError(f"method {params.config.method!r} is not the mlp baseline")
    x = _lift(x)
    t = np.asarray(t, dtype=np.float64)
    _validate_treatments(t)
    t_col = Tensor(t.reshape(-1, 1))
    out = _feedforward(ad.concat([x, t_col]), params.mlp, final_linear=True)
    return ad.reshape(out, (x.data.shape[0],))


def predict_outcome(params: ModelParams, x, t) -> Tensor:
    """Variant-dispatching forward pass from raw covariates."""
    if params.config.method == "acfr":
        return outcome_attention(params, encode(params, x), t)
    if params.config.method == "acfr-no-attn":
        return outcome_no_attention(params, encode(params, x), t)
    return mlp_baseline(params, x, t)


def response_curves(params: ModelParams, x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Predicted outcome for every unit at every grid dose; (units, len(grid))."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((x.shape[0], grid.size))
    for j, t in enumerate(grid):
        ts = np.full(x.shape[0], float(t))
        out[:, j] = predict_outcome(params, x, ts).data
    return out
