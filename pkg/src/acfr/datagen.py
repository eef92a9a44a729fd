"""Semi-synthetic observational data with controllable dose-selection bias.

Covariates are synthetic stand-ins for expression/count matrices (or loaded
from a user file), standardized per column and scaled to unit row norm. Three
unit-norm weight vectors v1, v2, v3 define the ground-truth response surface;
treatments are drawn from a Beta whose mode sits at each unit's best dose, so
the shape parameter alpha dials how strongly assignment favors the optimum
(alpha = 1 is unbiased uniform assignment).

Two response families are available:

    tcga-like:  y = 10 (v1.x + 12 v2.x t - 12 v3.x t^2)
    news-like:  y = 10 (v1.x + sin((v2.x / v3.x) pi t))

Everything is a pure function of the spec (seed included); datasets round-trip
through a plain-text directory format without losing a bit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

KINDS = ("tcga-like", "news-like")
T_MIN = 0.05
BETA_MIN = 0.05
TRAIN_FRACTION = 0.68
VAL_FRACTION = 0.12

# fixed child-stream tags so each generation stage has its own substream
_STREAM_COVARIATES = 0
_STREAM_WEIGHTS = 1
_STREAM_TREATMENTS = 2
_STREAM_NOISE = 3
_STREAM_SPLIT = 4


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n_samples: int
    n_covariates: int
    alpha: float = 2.0
    noise_std: float = 0.2
    seed: int = 0
    covariates_file: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}, expected one of {KINDS}")
        if self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1 for a valid Beta shape, got {self.alpha}")
        if self.n_samples < 10:
            raise ValueError("need at least 10 samples")
        if self.n_covariates < 2:
            raise ValueError("need at least 2 covariates")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")


@dataclass(frozen=True)
class WeightVectors:
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    def __iter__(self):
        return iter((self.v1, self.v2, self.v3))


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray            # (N, d), unit row norms
    t: np.ndarray            # (N,), in [0, 1]
    y: np.ndarray            # (N,), factual outcomes
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    weights: WeightVectors
    spec: DatasetSpec

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train_idx, "val": self.val_idx,
                    "test": self.test_idx}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None


def _stage_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def sample_weight_vectors(d: int, seed: int) -> WeightVectors:
    """Three independent standard-normal directions, each scaled to unit norm."""
    if d < 2:
        raise ValueError("need at least 2 covariates")
    rng = _stage_rng(seed, _STREAM_WEIGHTS)
    vs = []
    for _ in range(3):
        v = rng.normal(size=d)
        vs.append(v / np.linalg.norm(v))
    return WeightVectors(*vs)


def generate_covariates(spec: DatasetSpec) -> np.ndarray:
    """Nonnegative half-normal entries, mimicking expression/count data."""
    rng = _stage_rng(spec.seed, _STREAM_COVARIATES)
    return np.abs(rng.normal(size=(spec.n_samples, spec.n_covariates)))


def preprocess(x_raw: np.ndarray) -> np.ndarray:
    """Standardize each column, then scale every row to unit Euclidean norm."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    std = x_raw.std(axis=0)
    dead = np.flatnonzero(std == 0.0)
    if dead.size:
        raise ValueError(f"column {dead[0]} has zero variance, cannot standardize")
    centered = (x_raw - x_raw.mean(axis=0)) / std
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        row = int(np.flatnonzero(norms.reshape(-1) == 0.0)[0])
        raise ValueError(f"row {row} is all zeros after standardization")
    return centered / norms


def _dots(x: np.ndarray, weights: WeightVectors):
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return (x2 @ weights.v1, x2 @ weights.v2, x2 @ weights.v3)


def optimal_treatment(x, weights: WeightVectors, kind: str):
    """Dose maximizing the noiseless response, clamped into [T_MIN, 1].

    tcga-like responses peak at v2.x / (2 v3.x) (stationary point of the
    quadratic); news-like at v3.x / (2 v2.x) (sine argument pi/2). A zero
    denominator follows the clamp: +inf ratios map to 1, nonpositive to T_MIN.
    """
    _, d2, d3 = _dots(x, weights)
    if kind == "tcga-like":
        num, den = d2, 2.0 * d3
    elif kind == "news-like":
        num, den = d3, 2.0 * d2
    else:
        raise ValueError(f"unknown kind {kind!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    ratio = np.where(den == 0.0, np.where(num > 0.0, np.inf, -np.inf), ratio)
    t_star = np.clip(ratio, T_MIN, 1.0)
    return t_star if np.asarray(x).ndim > 1 else float(t_star[0])


def assign_treatment(x, weights: WeightVectors, alpha: float, kind: str,
                     rng: np.random.Generator):
    """Beta(alpha, beta) dose with mode at the unit's optimal treatment.

    beta = (alpha - 1) / t* + 2 - alpha places the Beta mode
    (alpha - 1) / (alpha + beta - 2) exactly at t*; alpha = 1 collapses to
    Beta(1, 1), the uniform, for every unit. Sampling goes through two gamma
    draws so a single rng stream covers any clamped shape value.
    """
    t_star = np.atleast_1d(optimal_treatment(x, weights, kind))
    beta = np.maximum((alpha - 1.0) / t_star + 2.0 - alpha, BETA_MIN)
    ga = rng.standard_gamma(alpha, size=t_star.shape)
    gb = rng.standard_gamma(beta)
    t = ga / (ga + gb)
    return t if np.asarray(x).ndim > 1 else float(t[0])


def outcome(x, t, weights: WeightVectors, kind: str):
    """Noiseless ground-truth response mu(x, t)."""
    d1, d2, d3 = _dots(x, weights)
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.size and (t_arr.min() < 0.0 or t_arr.max() > 1.0):
        raise ValueError("treatment outside [0, 1]")
    if kind == "tcga-like":
        y = 10.0 * (d1 + 12.0 * d2 * t_arr - 12.0 * d3 * t_arr ** 2)
    elif kind == "news-like":
        if np.any(d3 == 0.0):
            raise ValueError("news-like response undefined where v3.x == 0")
        y = 10.0 * (d1 + np.sin(d2 / d3 * math.pi * t_arr))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if np.asarray(x).ndim > 1:
        return y
    return y if t_arr.ndim > 0 else float(y[0])


def split_sizes(n: int) -> tuple:
    n_train = int(TRAIN_FRACTION * n)
    n_val = int(VAL_FRACTION * n)
    return n_train, n_val, n - n_train - n_val


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Full generation pipeline; a pure function of the spec."""
    if spec.covariates_file is not None:
        raw = load_covariates(spec.covariates_file)
        if raw.shape != (spec.n_samples, spec.n_covariates):
            raise ValueError(
                f"covariate file shape {raw.shape} does not match spec "
                f"({spec.n_samples}, {spec.n_covariates})"
            )
    else:
        raw = generate_covariates(spec)
    x = preprocess(raw)
    weights = sample_weight_vectors(spec.n_covariates, spec.seed)
    t = assign_treatment(x, weights, spec.alpha, spec.kind,
                         _stage_rng(spec.seed, _STREAM_TREATMENTS))
    y = outcome(x, t, weights, spec.kind)
    if spec.noise_std > 0.0:
        y = y + spec.noise_std * _stage_rng(spec.seed, _STREAM_NOISE).normal(size=spec.n_samples)
    perm = _stage_rng(spec.seed, _STREAM_SPLIT).permutation(spec.n_samples)
    n_train, n_val, _ = split_sizes(spec.n_samples)
    return Dataset(
        x=x, t=t, y=y,
        train_idx=np.sort(perm[:n_train]),
        val_idx=np.sort(perm[n_train:n_train + n_val]),
        test_idx=np.sort(perm[n_train + n_val:]),
        weights=weights,
        spec=spec,
    )


def response_grid(dataset: Dataset, indices, grid: np.ndarray) -> np.ndarray:
    """Noiseless potential outcomes for the chosen units at every grid dose."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < 0 or indices.max() >= dataset.n):
        raise IndexError(f"unit index out of range, dataset has {dataset.n} units")
    x = dataset.x[indices]
    out = np.zeros((indices.size, grid.size))
    for j, t in enumerate(grid):
        out[:, j] = outcome(x, float(t), dataset.weights, dataset.spec.kind)
    return out


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

COVARIATES_FILE = "covariates.csv"
OBSERVATIONS_FILE = "observations.csv"
SPLITS_FILE = "splits.txt"
METADATA_FILE = "metadata.txt"


def _fmt(value: float) -> str:
    return repr(float(value))


def load_covariates(path: str) -> np.ndarray:
    """Delimiter-separated numeric text, one row per unit, optional header."""
    with open(path) as fh:
        first = fh.readline()
    delimiter = "," if "," in first else None
    fields = first.strip().split(delimiter)
    try:
        [float(f) for f in fields]
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=delimiter, skiprows=skip, dtype=np.float64, ndmin=2)
    return data


def save_dataset(dataset: Dataset, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, COVARIATES_FILE), "w") as fh:
        for row in dataset.x:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(os.path.join(directory, OBSERVATIONS_FILE), "w") as fh:
        fh.write("index,t,y\n")
        for i in range(dataset.n):
            fh.write(f"{i},{_fmt(dataset.t[i])},{_fmt(dataset.y[i])}\n")
    with open(os.path.join(directory, SPLITS_FILE), "w") as fh:
        for name in ("train", "val", "test"):
            idx = dataset.split(name)
            fh.write(name + ": " + " ".join(str(int(i)) for i in idx) + "\n")
    spec = dataset.spec
    with open(os.path.join(directory, METADATA_FILE), "w") as fh:
        fh.write(f"kind = {spec.kind}\n")
        fh.write(f"n_samples = {spec.n_samples}\n")
        fh.write(f"n_covariates = {spec.n_covariates}\n")
        fh.write(f"alpha = {_fmt(spec.alpha)}\n")
        fh.write(f"noise_std = {_fmt(spec.noise_std)}\n")
        fh.write(f"seed = {spec.seed}\n")
        fh.write(f"covariates_file = {spec.covariates_file or ''}\n")
        for name, v in (("v1", dataset.weights.v1), ("v2", dataset.weights.v2),
                        ("v3", dataset.weights.v3)):
            fh.write(f"{name} = " + ",".join(_fmt(e) for e in v) + "\n")


def load_dataset(directory: str) -> Dataset:
    meta = {}
    with open(os.path.join(directory, METADATA_FILE)) as fh:
        for line in fh:
            key, _, value = line.partition(" = ")
            meta[key.strip()] = value.rstrip("\n")
    spec = DatasetSpec(
        kind=meta["kind"],
        n_samples=int(meta["n_samples"]),
        n_covariates=int(meta["n_covariates"]),
        alpha=float(meta["alpha"]),
        noise_std=float(meta["noise_std"]),
        seed=int(meta["seed"]),
        covariates_file=meta["covariates_file"] or None,
    )
    weights = WeightVectors(*(
        np.array([float(v) for v in meta[name].split(",")])
        for name in ("v1", "v2", "v3")
    ))
    x = np.loadtxt(os.path.join(directory, COVARIATES_FILE), delimiter=",",
                   dtype=np.float64, ndmin=2)
    obs = np.loadtxt(os.path.join(directory, OBSERVATIONS_FILE), delimiter=",",
                     skiprows=1, dtype=np.float64, ndmin=2)
    splits = {}
    with open(os.path.join(directory, SPLITS_FILE)) as fh:
        for line in fh:
            name, _, rest = line.partition(": ")
            values = rest.split()
            splits[name.strip()] = np.array([int(v) for v in values], dtype=np.intp)
    return Dataset(
        x=x, t=obs[:, 1].copy(), y=obs[:, 2].copy(),
        train_idx=splits["train"], val_idx=splits["val"], test_idx=splits["test"],
        weights=weights, spec=spec,
    )
