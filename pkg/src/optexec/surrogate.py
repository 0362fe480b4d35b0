"""Feed-forward network surrogates for stage values (critic) and trade fractions (actor).

Inputs are min-max scaled from the training box onto the unit hypercube.
Value targets are min-max scaled to [0, 1]; policy networks end in a sigmoid
so that predictions are fractions of the current inventory.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADS = ("identity", "sigmoid")
POLICY_CLIP = 1e-6
_SIGMOID_MAX = 1.0 - 2.0 ** -53


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: int = 3
    hidden_width: int = 16
    head: str = "identity"
    activation: str = "elu"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError(f"invalid network shape {self}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.activation != "elu":
            raise ValueError("only ELU hidden activations are supported")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([self.input_dim] + [self.hidden_width] * self.hidden_layers + [1],
                        dtype=np.int64)

    @property
    def n_params(self) -> int:
        s = self.sizes
        return int(np.sum(s[:-1] * s[1:] + s[1:]))


@dataclass(frozen=True)
class ScalingSpec:
    input_lo: tuple[float, ...]
    input_hi: tuple[float, ...]
    output_lo: float = 0.0
    output_hi: float = 1.0

    def __post_init__(self):
        lo = tuple(float(v) for v in self.input_lo)
        hi = tuple(float(v) for v in self.input_hi)
        if len(lo) != len(hi) or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"input bounds need hi > lo per coordinate: {lo} / {hi}")
        if not self.output_hi > self.output_lo:
            raise ValueError("output_hi must exceed output_lo")
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)
        object.__setattr__(self, "output_lo", float(self.output_lo))
        object.__setattr__(self, "output_hi", float(self.output_hi))

    @classmethod
    def for_targets(cls, input_lo, input_hi, targets) -> "ScalingSpec":
        """Output range taken from the min and max of ``targets``."""
        lo, hi = float(np.min(targets)), float(np.max(targets))
        if not hi > lo:
            hi = lo + max(1.0, abs(lo))
        return cls(tuple(input_lo), tuple(input_hi), lo, hi)

    def scale_inputs(self, y):
        lo, hi = np.asarray(self.input_lo), np.asarray(self.input_hi)
        return (np.asarray(y, dtype=float) - lo) / (hi - lo)

    def unscale_inputs(self, z):
        lo, hi = np.asarray(self.input_lo), np.asarray(self.input_hi)
        return lo + np.asarray(z, dtype=float) * (hi - lo)

    def scale_outputs(self, v):
        return (np.asarray(v, dtype=float) - self.output_lo) / (self.output_hi - self.output_lo)

    def unscale_outputs(self, s):
        return self.output_lo + np.asarray(s, dtype=float) * (self.output_hi - self.output_lo)

    def outside(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.any((y < np.asarray(self.input_lo)) | (y > np.asarray(self.input_hi)), axis=1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Truncated-normal weights (std 1/sqrt(fan_in), cut at 2 std), zero biases."""
    sizes = spec.sizes
    parts = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        std = 1.0 / np.sqrt(n_in)
        w = rng.standard_normal(n_in * n_out)
        while np.any(bad := np.abs(w) > 2.0):
            w[bad] = rng.standard_normal(int(bad.sum()))
        parts += [std * w, np.zeros(n_out)]
    return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class Surrogate:
    """A fitted network together with its scaling; immutable once built."""

    spec: MlpSpec
    scaling: ScalingSpec
    params: np.ndarray
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        params = np.array(self.params, dtype=float)
        if params.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {params.shape}")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "loss_history", np.asarray(self.loss_history, dtype=float))

    @property
    def is_policy(self) -> bool:
        return self.spec.head == "sigmoid"

    def raw(self, y) -> np.ndarray:
        """Network output on already-unscaled inputs ``y`` of shape (m, input_dim)."""
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected inputs of shape (m, {self.spec.input_dim}), got {y.shape}")
        z = np.ascontiguousarray(self.scaling.scale_inputs(y))
        out = np.empty(z.shape[0])
        _kernels.mlp_forward(self.params, self.spec.sizes, self.is_policy, z, out)
        return out

    def predict(self, y):
        """Value (unscaled) or trade fraction in (0, 1); scalar in, scalar out."""
        single = np.ndim(y) == 1
        out = self.raw(np.atleast_2d(y))
        if self.is_policy:
            out = np.clip(out, np.finfo(float).tiny, _SIGMOID_MAX)
        else:
            out = self.scaling.unscale_outputs(out)
        return float(out[0]) if single else out

    def outside_domain(self, y):
        mask = self.scaling.outside(y)
        return bool(mask[0]) if np.ndim(y) == 1 else mask

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "spec": asdict(self.spec),
            "layer_sizes": self.spec.sizes.tolist(),
            "scaling": asdict(self.scaling),
            "params": self.params.tolist(),
            "loss_history": self.loss_history.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Surrogate":
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported surrogate format {data.get('format_version')!r}")
        spec = MlpSpec(**data["spec"])
        if spec.sizes.tolist() != data["layer_sizes"]:
            raise ValueError("layer sizes do not match the stored spec")
        return cls(spec, ScalingSpec(**data["scaling"]), np.array(data["params"]),
                   np.array(data.get("loss_history", [])))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "Surrogate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(s: Surrogate, y):
    return s.predict(y)


def fit(spec: MlpSpec, scaling: ScalingSpec, cfg: TrainConfig, inputs, targets,
        init: np.ndarray | None = None, epoch_chunk: int = 100) -> Surrogate:
    """Train a network by mini-batch Adam on the mean squared error.

    ``init`` warm-starts from existing parameters. Data are reshuffled every
    epoch from a generator seeded by ``cfg.seed``; the last partial batch is
    kept.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float).ravel()
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs of shape (m, {spec.input_dim}), got {inputs.shape}")
    if targets.shape[0] != inputs.shape[0]:
        raise ValueError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
    if not np.all(np.isfinite(targets)) or not np.all(np.isfinite(inputs)):
        raise ValueError("training data contain non-finite values")
    if len(scaling.input_lo) != spec.input_dim:
        raise ValueError("scaling dimension does not match the network input")

    if spec.head == "sigmoid":
        y = np.clip(targets, POLICY_CLIP, 1.0 - POLICY_CLIP)
    else:
        y = scaling.scale_outputs(targets)
    z = np.ascontiguousarray(scaling.scale_inputs(inputs))
    y = np.ascontiguousarray(y)

    init_rng = np.random.default_rng([cfg.seed, 0])
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    params = init_params(spec, init_rng) if init is None else np.array(init, dtype=float)
    if params.shape != (spec.n_params,):
        raise ValueError("warm-start parameters do not match the network shape")
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    losses = np.empty(cfg.epochs)
    sizes = spec.sizes
    n = z.shape[0]
    t = 0
    for start in range(0, cfg.epochs, epoch_chunk):
        stop = min(cfg.epochs, start + epoch_chunk)
        perms = np.stack([shuffle_rng.permutation(n) for _ in range(stop - start)])
        t = _kernels.adam_epochs(params, sizes, spec.head == "sigmoid", z, y, perms,
                                 cfg.batch_size, cfg.learning_rate, cfg.beta1, cfg.beta2,
                                 cfg.epsilon, m, v, t, losses[start:stop])
        if not np.isfinite(losses[stop - 1]):
            raise FloatingPointError(f"training diverged at epoch {stop}")
    log.debug("fit %s head: final loss %.3e after %d epochs", spec.head, losses[-1], cfg.epochs)
    return Surrogate(spec, scaling, params, losses)
