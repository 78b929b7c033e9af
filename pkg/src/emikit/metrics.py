"""Pearson correlation evaluation over the six emotion dimensions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

N_EMOTIONS = 6


def pearson(y, yhat):
    """Population-normalized Pearson correlation.

    Covariance and variances all divide by n, so the convention cancels in
    the ratio. Zero variance in either argument makes the coefficient
    undefined: a warning is emitted and NaN returned, never a silent 0.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise UsageError(f"pearson needs equal lengths, got {y.shape} and {yhat.shape}")
    if y.size < 2:
        raise UsageError("pearson needs at least 2 points")
    dy = y - y.mean()
    dyh = yhat - yhat.mean()
    var_y = (dy * dy).mean()
    var_yh = (dyh * dyh).mean()
    if var_y == 0.0 or var_yh == 0.0:
        warnings.warn("pearson undefined: zero variance input", stacklevel=2)
        return float("nan")
    rho = float((dy * dyh).mean() / np.sqrt(var_y * var_yh))
    return min(1.0, max(-1.0, rho))  # rounding can overshoot by an ulp


@dataclass
class PearsonReport:
    rho_per_emotion: list  # 6 floats, NaN where undefined
    undefined: list        # 6 bools
    rho_mean: float        # mean over the defined entries
    n_samples: int

    @classmethod
    def from_predictions(cls, targets, predictions):
        targets = np.asarray(targets, dtype=np.float64)
        predictions = np.asarray(predictions, dtype=np.float64)
        if targets.shape != predictions.shape or targets.ndim != 2 \
                or targets.shape[1] != N_EMOTIONS:
            raise UsageError(
                f"expected matching (n, 6) arrays, got {targets.shape} and {predictions.shape}")
        rhos, flags = [], []
        for i in range(N_EMOTIONS):
            r = pearson(targets[:, i], predictions[:, i])
            rhos.append(r)
            flags.append(not np.isfinite(r))
        defined = [r for r, bad in zip(rhos, flags) if not bad]
        mean = float(np.mean(defined)) if defined else float("nan")
        return cls(rho_per_emotion=rhos, undefined=flags, rho_mean=mean,
                   n_samples=targets.shape[0])

    def to_dict(self):
        return {
            "rho_per_emotion": [None if bad else r
                                for r, bad in zip(self.rho_per_emotion, self.undefined)],
            "undefined": self.undefined,
            "rho_mean": None if not np.isfinite(self.rho_mean) else self.rho_mean,
            "n_samples": self.n_samples,
        }


def evaluate(model, samples):
    """Per-emotion correlation between targets and model predictions."""
    if not samples:
        raise UsageError("cannot evaluate on an empty corpus")
    predictions = np.stack([model.predict(s) for s in samples])
    targets = np.stack([s.target for s in samples])
    return PearsonReport.from_predictions(targets, predictions)
