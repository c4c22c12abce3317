from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from avs.tensorimg import load_tensors, save_tensors

PARAM_NAMES = ("positions", "log_scales", "color_logits", "opacity_logits")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianCloud:
    """Scene parameters: N isotropic splats in unconstrained parametrization.

    Effective colour and opacity are sigmoids of the logits, effective scale
    is ``exp(log_scales)``.
    """

    positions: np.ndarray       # (N, 3)
    log_scales: np.ndarray      # (N,)
    color_logits: np.ndarray    # (N, 3)
    opacity_logits: np.ndarray  # (N,)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n)
        self.color_logits = np.asarray(self.color_logits, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        for f in fields(self):
            if not np.all(np.isfinite(getattr(self, f.name))):
                raise ValueError(f"non-finite values in {f.name}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0))

    @property
    def colors(self) -> np.ndarray:
        return sigmoid(self.color_logits)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.copy() for k, v in self.params().items()})

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(**{k: np.concatenate([v, getattr(other, k)])
                                for k, v in self.params().items()})


@dataclass
class CloudGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    color_logits: np.ndarray
    opacity_logits: np.ndarray

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "CloudGradients":
        return cls(**{k: np.zeros_like(v) for k, v in cloud.params().items()})

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def save_cloud(cloud: GaussianCloud, path) -> None:
    save_tensors(cloud.params(), path)


def load_cloud(path) -> GaussianCloud:
    t = load_tensors(path)
    missing = [n for n in PARAM_NAMES if n not in t]
    if missing:
        raise ValueError(f"cloud file lacks tensors {missing}")
    return GaussianCloud(**{n: t[n].astype(np.float64) for n in PARAM_NAMES})
