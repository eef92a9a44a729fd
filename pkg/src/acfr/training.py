"""Alternating adversarial training of the counterfactual regressor.

Each outer iteration draws a minibatch, freezes the representation, lets the
treatment predictor take M gradient steps on the adversarial loss (learning
rate eta2 * gamma), then recomputes both losses against the updated predictor
and moves the encoder along grad(l_pred) - gamma * grad(l_adv) while the
outcome head follows grad(l_pred) alone. With gamma = 0 the adversary branch
is skipped entirely; the result is identical because the inner step size and
the encoder penalty both vanish.

Plain SGD applies the update equations literally. With the adam option the
same equations act as gradient providers and adam supplies the step.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import model as md
from .autodiff import Tensor
from .datagen import Dataset
from .splines import SplineConfig

CHECKPOINT_VERSION = "acfr-ckpt-1"

_STREAM_BATCH = 101
_STREAM_ADVERSARY = 102


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the partial history."""

    def __init__(self, iteration: int, pred: float, adv: float, history=None):
        super().__init__(
            f"non-finite loss at iteration {iteration}: l_pred={pred}, l_adv={adv}"
        )
        self.iteration = iteration
        self.pred = pred
        self.adv = adv
        self.history = history


class CheckpointError(RuntimeError):
    """A checkpoint file failed to parse or validate."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 64
    inner_steps: int = 10
    gamma: float = 1.0
    eta1: float = 1e-4
    eta2: float = 1e-4
    seed: int = 0
    optimizer: str = "sgd"
    eval_interval: int = 100
    disable_adversary: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")
        if self.eta1 <= 0.0 or self.eta2 <= 0.0:
            raise ValueError("step sizes must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")


@dataclass
class TrainHistory:
    pred_losses: list = field(default_factory=list)
    adv_losses: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    val_points: list = field(default_factory=list)  # (iteration, val l_pred)

    def write_csv(self, path: str) -> None:
        val_at = {it: v for it, v in self.val_points}
        with open(path, "w") as fh:
            fh.write("iteration,l_pred,l_adv,val_l_pred,wall_ms\n")
            for i, (lp, la, w) in enumerate(zip(self.pred_losses, self.adv_losses,
                                                self.wall_ms)):
                val = repr(val_at[i]) if i in val_at else ""
                fh.write(f"{i},{lp!r},{la!r},{val},{w!r}\n")


def pred_loss(y, y_hat) -> float:
    """Mean squared outcome error."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"pred_loss: shapes differ, {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("pred_loss: empty batch")
    return float(np.mean((y - y_hat) ** 2))


def adv_loss(t, t_hat) -> float:
    """Mean squared treatment recovery error."""
    t = np.asarray(t, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if t.shape != t_hat.shape:
        raise ValueError(f"adv_loss: shapes differ, {t.shape} vs {t_hat.shape}")
    if t.size == 0:
        raise ValueError("adv_loss: empty batch")
    return float(np.mean((t - t_hat) ** 2))


class Adam:
    """Per-tensor adam state; the caller supplies gradient and learning rate."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._state: dict = {}

    def step(self, tensor: Tensor, grad: np.ndarray, lr: float) -> None:
        m, v, k = self._state.get(id(tensor), (None, None, 0))
        if m is None:
            m, v = np.zeros_like(grad), np.zeros_like(grad)
        k += 1
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad ** 2
        self._state[id(tensor)] = (m, v, k)
        m_hat = m / (1 - self.beta1 ** k)
        v_hat = v / (1 - self.beta2 ** k)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Stepper:
    def __init__(self, optimizer: str):
        self._adam = Adam() if optimizer == "adam" else None

    def apply(self, tensors, lr: float) -> None:
        for t in tensors:
            if t.grad is None:
                continue
            if self._adam is None:
                t.data -= lr * t.grad
            else:
                self._adam.step(t, t.grad, lr)


def _head_forward(params: md.ModelParams, z: Tensor, t: np.ndarray) -> Tensor:
    if params.config.method == "acfr":
        return md.outcome_attention(params, z, t)
    return md.outcome_no_attention(params, z, t)


def _validation_loss(params: md.ModelParams, dataset: Dataset) -> float:
    idx = dataset.val_idx
    if idx.size == 0:
        return float("nan")
    preds = md.predict_outcome(params, dataset.x[idx], dataset.t[idx]).data
    return pred_loss(dataset.y[idx], preds)


def train(dataset: Dataset, model_cfg: md.ModelConfig, cfg: TrainConfig):
    """Run the full loop; returns (params, history). Deterministic per seed."""
    if cfg.batch_size > dataset.train_idx.size:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds training set size "
            f"{dataset.train_idx.size}"
        )
    params = md.init_params(model_cfg, cfg.seed)
    batch_rng = np.random.default_rng([cfg.seed, _STREAM_BATCH])
    stepper = _Stepper(cfg.optimizer)
    history = TrainHistory()

    x_tr = dataset.x[dataset.train_idx]
    t_tr = dataset.t[dataset.train_idx]
    y_tr = dataset.y[dataset.train_idx]
    n_tr = x_tr.shape[0]

    is_mlp = model_cfg.method == "mlp"
    adversary_on = (not is_mlp) and cfg.gamma != 0.0 and not cfg.disable_adversary

    pi_params = params.predictor_params() if not is_mlp else []
    phi_params = params.encoder_params() if not is_mlp else []
    h_params = params.outcome_params()

    for it in range(cfg.iterations):
        start = time.perf_counter()
        batch = batch_rng.integers(0, n_tr, size=cfg.batch_size)
        xb, tb, yb = x_tr[batch], t_tr[batch], y_tr[batch]
        tb_const = Tensor(tb)
        yb_const = Tensor(yb)

        if is_mlp:
            ad.zero_grads(h_params)
            loss = ad.mse(md.mlp_baseline(params, xb, tb), yb_const)
            lp, la = loss.item(), float("nan")
            if not np.isfinite(lp):
                raise DivergenceError(it, lp, la, history)
            loss.backward()
            stepper.apply(h_params, cfg.eta1)
        else:
            # adversary stage: representation frozen, only pi moves
            z_fixed = Tensor(md.encode(params, xb).data)
            if adversary_on:
                for _ in range(cfg.inner_steps):
                    ad.zero_grads(pi_params)
                    inner = ad.mse(md.predict_treatment(params, z_fixed), tb_const)
                    inner.backward()
                    stepper.apply(pi_params, cfg.eta2 * cfg.gamma)

            # outcome stage: one graph, losses recomputed against updated pi
            ad.zero_grads(phi_params + h_params + pi_params)
            z = md.encode(params, xb)
            l_pred_node = ad.mse(_head_forward(params, z, tb), yb_const)
            if adversary_on:
                l_adv_node = ad.mse(md.predict_treatment(params, z), tb_const)
                total = ad.sub(l_pred_node, ad.mul(l_adv_node, cfg.gamma))
                la = l_adv_node.item()
            else:
                la = adv_loss(tb, md.predict_treatment(params, z_fixed).data)
                total = l_pred_node
            lp = l_pred_node.item()
            if not (np.isfinite(lp) and np.isfinite(la)):
                raise DivergenceError(it, lp, la, history)
            total.backward()
            # pi accumulated -gamma * grad(l_adv) here; it is not applied
            stepper.apply(phi_params, cfg.eta1)
            stepper.apply(h_params, cfg.eta1)

        history.pred_losses.append(lp)
        history.adv_losses.append(la)
        history.wall_ms.append((time.perf_counter() - start) * 1e3)
        if (it + 1) % cfg.eval_interval == 0 or it == cfg.iterations - 1:
            history.val_points.append((it, _validation_loss(params, dataset)))

    return params, history


@dataclass
class AdversaryFit:
    """A treatment predictor trained in isolation on a frozen representation."""

    layers: list
    final_loss: float
    steps: int

    def predict(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        raw = md._feedforward(Tensor(z), self.layers, final_linear=True)
        return ad.sigmoid(raw).data.reshape(-1)


def fit_adversary_to_convergence(z, t, seed: int = 0, hidden: int = 64,
                                 lr: float = 1e-2, tol: float = 1e-7,
                                 patience: int = 100,
                                 max_steps: int = 20_000) -> AdversaryFit:
    """Train a fresh predictor on fixed (z, t) until the loss plateaus.

    Stops once the best loss fails to improve by ``tol`` for ``patience``
    consecutive full-batch adam steps (or at ``max_steps``). ``hidden=0``
    drops the hidden layer, leaving a sigmoid-squashed linear predictor.
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if z.shape[0] != t.shape[0]:
        raise ValueError(f"z has {z.shape[0]} rows but t has {t.shape[0]}")
    rng = np.random.default_rng([seed, _STREAM_ADVERSARY])
    dims = [z.shape[1]] + ([hidden] if hidden > 0 else []) + [1]
    layers = md._init_stack(rng, dims)
    tensors = md._flatten_layers(layers)
    adam = Adam()
    z_const, t_const = Tensor(z), Tensor(t)

    best = np.inf
    stale = 0
    steps = 0
    current = np.inf
    while steps < max_steps:
        ad.zero_grads(tensors)
        raw = md._feedforward(z_const, layers, final_linear=True)
        out = ad.reshape(ad.sigmoid(raw), (t.shape[0],))
        loss = ad.mse(out, t_const)
        current = loss.item()
        if not np.isfinite(current):
            raise DivergenceError(steps, float("nan"), current)
        if best - current >= tol:
            best = current
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
        loss.backward()
        for tensor in tensors:
            adam.step(tensor, tensor.grad, lr)
        steps += 1
    return AdversaryFit(layers=layers, final_loss=current, steps=steps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    version: str
    model_config: md.ModelConfig
    train_config: TrainConfig
    iteration: int
    rng_state: dict | None
    weights: dict


def _model_cfg_to_dict(cfg: md.ModelConfig) -> dict:
    out = asdict(cfg)
    del out["spline"]
    return out


def save_checkpoint(params: md.ModelParams, train_cfg: TrainConfig, path: str,
                    iteration: int = 0, rng_state: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "model_config": _model_cfg_to_dict(params.config),
        "spline_config": {"degree": params.config.spline.degree,
                          "knots": list(params.config.spline.knots)},
        "train_config": asdict(train_cfg),
        "iteration": iteration,
        "rng_state": rng_state,
        "weights": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in params.named_arrays().items()
        },
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"could not parse checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError(f"checkpoint {path} has no version field")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc['version']!r} does not match "
            f"{CHECKPOINT_VERSION!r}"
        )
    spline = SplineConfig(degree=doc["spline_config"]["degree"],
                          knots=tuple(doc["spline_config"]["knots"]))
    model_cfg = md.ModelConfig(spline=spline, **doc["model_config"])
    train_cfg = TrainConfig(**doc["train_config"])
    weights = {}
    for name, entry in doc["weights"].items():
        arr = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(
                f"weight {name!r}: {arr.size} values do not fill shape {shape}"
            )
        weights[name] = arr.reshape(shape)
    return Checkpoint(version=doc["version"], model_config=model_cfg,
                      train_config=train_cfg, iteration=doc["iteration"],
                      rng_state=doc.get("rng_state"), weights=weights)


def params_from_checkpoint(ckpt: Checkpoint) -> md.ModelParams:
    """Rebuild ModelParams, validating every stored shape against the config."""
    params = md.init_params(ckpt.model_config, seed=ckpt.train_config.seed)
    expected = params.named_arrays()
    if set(expected) != set(ckpt.weights):
        missing = sorted(set(expected) ^ set(ckpt.weights))
        raise CheckpointError(f"weight set mismatch, offending names: {missing}")
    for name, arr in ckpt.weights.items():
        if expected[name].shape != arr.shape:
            raise CheckpointError(
                f"weight {name!r} has shape {arr.shape}, config implies "
                f"{expected[name].shape}"
            )
        expected[name][...] = arr
    return params
