"""Experiment configuration files: one INI document describes a full run.

Sections map onto the library's config objects: [dataset] onto DatasetSpec,
[model] onto ModelConfig, [train] onto TrainConfig; [run] carries the output
directory and the seed list, [eval] the splits to score, and the optional
[sweep] section the bias levels for robustness sweeps. Seeds always come from
the run section or the command line, never from the sections they feed, so
one file plus one seed pins an entire experiment.

Unknown sections or keys are rejected outright; a typo must fail, not
silently fall back to a default.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .datagen import DatasetSpec, KINDS
from .model import METHODS, ModelConfig
from .splines import SplineConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


_DATASET_KEYS = {"kind", "n_samples", "n_covariates", "alpha", "noise_std",
                 "covariates_file"}
_MODEL_KEYS = {"method", "hidden_width", "hidden_layers", "repr_dim", "attn_dim",
               "value_dim", "tokens", "head_hidden", "spline_degree",
               "spline_knots", "freeze_query"}
_TRAIN_KEYS = {"iterations", "batch_size", "inner_steps", "gamma", "eta1", "eta2",
               "optimizer", "eval_interval", "disable_adversary"}
_RUN_KEYS = {"out_dir", "seeds"}
_EVAL_KEYS = {"splits", "oracle"}
_SWEEP_KEYS = {"alphas", "methods"}
_SECTIONS = {"run": _RUN_KEYS, "dataset": _DATASET_KEYS, "model": _MODEL_KEYS,
             "train": _TRAIN_KEYS, "eval": _EVAL_KEYS, "sweep": _SWEEP_KEYS}

_ATTENTION_KEYS = {"repr_dim", "attn_dim", "value_dim", "tokens", "head_hidden",
                   "spline_degree", "spline_knots", "freeze_query"}

OUT_ROOT_ENV = "ACFR_OUT_ROOT"


@dataclass
class RunConfig:
    out_dir: str
    seeds: tuple
    dataset: dict
    model: dict
    train: dict
    eval_splits: tuple = ("test",)
    eval_oracle: bool = False
    sweep_alphas: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    sweep_methods: tuple = ("acfr", "mlp")
    explicit_model_keys: frozenset = field(default_factory=frozenset)

    def dataset_spec(self, seed: int, alpha: float | None = None) -> DatasetSpec:
        kwargs = dict(self.dataset)
        if alpha is not None:
            kwargs["alpha"] = alpha
        return DatasetSpec(seed=seed, **kwargs)

    def model_config(self, input_dim: int, method: str | None = None) -> ModelConfig:
        kwargs = dict(self.model)
        if method is not None:
            kwargs["method"] = method
        return ModelConfig(input_dim=input_dim, **kwargs)

    def train_config(self, seed: int, gamma: float | None = None) -> TrainConfig:
        kwargs = dict(self.train)
        if gamma is not None:
            kwargs["gamma"] = gamma
        return TrainConfig(seed=seed, **kwargs)

    def attention_keys_set_explicitly(self) -> frozenset:
        return self.explicit_model_keys & _ATTENTION_KEYS


def _parse_value(section: str, key: str, raw: str, kind: type):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}"
        ) from None


def _parse_list(section: str, key: str, raw: str, kind: type) -> tuple:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    if not items:
        raise ConfigError(f"[{section}] {key}: empty list")
    return tuple(_parse_value(section, key, item, kind) for item in items)


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - _SECTIONS[section]
        if unknown:
            raise ConfigError(
                f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
            )
    for required in ("run", "dataset"):
        if required not in parser:
            raise ConfigError(f"missing required section [{required}]")

    run = parser["run"]
    if "out_dir" not in run or "seeds" not in run:
        raise ConfigError("[run] must define out_dir and seeds")
    seeds = _parse_list("run", "seeds", run["seeds"], int)

    ds = parser["dataset"]
    for required in ("kind", "n_samples", "n_covariates"):
        if required not in ds:
            raise ConfigError(f"[dataset] must define {required}")
    dataset = {
        "kind": ds["kind"].strip(),
        "n_samples": _parse_value("dataset", "n_samples", ds["n_samples"], int),
        "n_covariates": _parse_value("dataset", "n_covariates", ds["n_covariates"], int),
    }
    if dataset["kind"] not in KINDS:
        raise ConfigError(f"[dataset] kind must be one of {KINDS}")
    if "alpha" in ds:
        dataset["alpha"] = _parse_value("dataset", "alpha", ds["alpha"], float)
    if "noise_std" in ds:
        dataset["noise_std"] = _parse_value("dataset", "noise_std", ds["noise_std"], float)
    if "covariates_file" in ds and ds["covariates_file"].strip():
        cov = ds["covariates_file"].strip()
        if not os.path.exists(cov):
            raise ConfigError(f"[dataset] covariates_file does not exist: {cov}")
        dataset["covariates_file"] = cov

    model: dict = {}
    explicit: set = set()
    if "model" in parser:
        sec = parser["model"]
        explicit = set(sec)
        if "method" in sec:
            model["method"] = sec["method"].strip()
            if model["method"] not in METHODS:
                raise ConfigError(f"[model] method must be one of {METHODS}")
        for key in ("hidden_width", "hidden_layers", "repr_dim", "attn_dim",
                    "value_dim", "tokens", "head_hidden"):
            if key in sec:
                model[key] = _parse_value("model", key, sec[key], int)
        degree = _parse_value("model", "spline_degree", sec["spline_degree"], int) \
            if "spline_degree" in sec else None
        knots = _parse_list("model", "spline_knots", sec["spline_knots"], float) \
            if "spline_knots" in sec else None
        if degree is not None or knots is not None:
            try:
                model["spline"] = SplineConfig(
                    degree=degree if degree is not None else 2,
                    knots=knots if knots is not None else (1 / 3, 2 / 3),
                )
            except ValueError as exc:
                raise ConfigError(f"[model] invalid spline: {exc}") from exc
        if "freeze_query" in sec:
            model["freeze_query"] = _parse_value("model", "freeze_query",
                                                 sec["freeze_query"], bool)

    train: dict = {}
    if "train" in parser:
        sec = parser["train"]
        for key, kind in (("iterations", int), ("batch_size", int),
                          ("inner_steps", int), ("gamma", float), ("eta1", float),
                          ("eta2", float), ("eval_interval", int),
                          ("disable_adversary", bool)):
            if key in sec:
                train[key] = _parse_value("train", key, sec[key], kind)
        if "optimizer" in sec:
            train["optimizer"] = sec["optimizer"].strip()

    eval_splits: tuple = ("test",)
    eval_oracle = False
    if "eval" in parser:
        sec = parser["eval"]
        if "splits" in sec:
            eval_splits = tuple(s for s in _parse_list("eval", "splits",
                                                       sec["splits"], str))
            for split in eval_splits:
                if split not in ("train", "val", "test"):
                    raise ConfigError(f"[eval] unknown split {split!r}")
        if "oracle" in sec:
            eval_oracle = _parse_value("eval", "oracle", sec["oracle"], bool)

    sweep_alphas = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    sweep_methods = ("acfr", "mlp")
    if "sweep" in parser:
        sec = parser["sweep"]
        if "alphas" in sec:
            sweep_alphas = _parse_list("sweep", "alphas", sec["alphas"], float)
            if any(a < 1.0 for a in sweep_alphas):
                raise ConfigError("[sweep] alphas must all be >= 1")
        if "methods" in sec:
            sweep_methods = _parse_list("sweep", "methods", sec["methods"], str)
            for method in sweep_methods:
                if method not in METHODS:
                    raise ConfigError(f"[sweep] unknown method {method!r}")

    cfg = RunConfig(
        out_dir=run["out_dir"].strip(),
        seeds=seeds,
        dataset=dataset,
        model=model,
        train=train,
        eval_splits=eval_splits,
        eval_oracle=eval_oracle,
        sweep_alphas=sweep_alphas,
        sweep_methods=sweep_methods,
        explicit_model_keys=frozenset(explicit),
    )
    # construct every derived object once so validation errors surface at parse
    try:
        cfg.dataset_spec(seed=0)
        cfg.model_config(input_dim=dataset["n_covariates"])
        cfg.train_config(seed=0)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def resolve_out_dir(path: str) -> str:
    """Relative output paths land under the output-root environment variable."""
    root = os.environ.get(OUT_ROOT_ENV, "")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path
