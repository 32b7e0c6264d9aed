"""Input autoscaling and output normalization shared by all regressors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScalingSpec:
    """Affine maps applied before fitting.

    Inputs are mapped as ``(x - input_offsets) * input_weights``. Polynomial
    and tanh models use zero offsets and inverse population standard
    deviations as weights; networks use a min/max map onto [-1, 1].
    Outputs are mapped as ``(y - output_offset) / output_halfrange`` onto
    [-1, 1] using training min/max.
    """

    input_weights: np.ndarray
    output_offset: np.ndarray
    output_halfrange: np.ndarray
    input_offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.input_weights, dtype=float)
        off = np.zeros_like(w) if self.input_offsets is None else np.asarray(self.input_offsets, float)
        object.__setattr__(self, "input_weights", w)
        object.__setattr__(self, "input_offsets", off)
        object.__setattr__(self, "output_offset", np.atleast_1d(np.asarray(self.output_offset, float)))
        object.__setattr__(
            self, "output_halfrange", np.atleast_1d(np.asarray(self.output_halfrange, float))
        )
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("input weights must be positive and finite")
        if np.any(self.output_halfrange <= 0):
            raise ValueError("output half-range must be positive")

    @classmethod
    def fit(cls, x, y, inputs: str = "std") -> "ScalingSpec":
        """Derive a scaling from training data.

        ``inputs="std"`` uses inverse population standard deviations without
        centering; ``inputs="minmax"`` maps each input column onto [-1, 1].
        Degenerate (constant) columns get unit weight.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        y2 = y[:, None] if y.ndim == 1 else y
        lo, hi = y2.min(axis=0), y2.max(axis=0)
        half = (hi - lo) / 2.0
        half = np.where(half > 0, half, 1.0)
        if inputs == "std":
            sd = x.std(axis=0)
            weights = np.where(sd > 0, 1.0 / np.where(sd > 0, sd, 1.0), 1.0)
            offsets = np.zeros(x.shape[1])
        elif inputs == "minmax":
            xlo, xhi = x.min(axis=0), x.max(axis=0)
            xhalf = (xhi - xlo) / 2.0
            weights = np.where(xhalf > 0, 1.0 / np.where(xhalf > 0, xhalf, 1.0), 1.0)
            offsets = (xhi + xlo) / 2.0
        else:
            raise ValueError(f"unknown input scaling {inputs!r}")
        return cls(weights, (hi + lo) / 2.0, half, offsets)

    def scale_inputs(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.input_offsets) * self.input_weights

    def normalize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return (y - self.output_offset[0]) / self.output_halfrange[0]
        return (y - self.output_offset) / self.output_halfrange

    def denormalize(self, yn) -> np.ndarray:
        yn = np.asarray(yn, dtype=float)
        if yn.ndim == 1:
            return yn * self.output_halfrange[0] + self.output_offset[0]
        return yn * self.output_halfrange + self.output_offset

    def to_dict(self) -> dict:
        return {
            "input_weights": self.input_weights.tolist(),
            "input_offsets": self.input_offsets.tolist(),
            "output_offset": self.output_offset.tolist(),
            "output_halfrange": self.output_halfrange.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingSpec":
        return cls(
            np.array(d["input_weights"]),
            np.array(d["output_offset"]),
            np.array(d["output_halfrange"]),
            np.array(d.get("input_offsets", np.zeros(len(d["input_weights"])))),
        )
