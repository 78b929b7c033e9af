"""Training machinery: cosine warm-restart schedule, momentum SGD, parameter
EMA, MSE loss, and the stage-2 regression loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .corpus import CorruptionSpec, corrupt
from .errors import NumericError, UsageError
from .fusion import FusionModel
from .metrics import PearsonReport, evaluate


@dataclass
class CosineRestartSchedule:
    """Cosine annealing between eta_max and eta_min with warm restarts.

    t_cur counts epochs inside the current cycle; advancing wraps it back to
    zero every cycle_len epochs, so eta is periodic with period cycle_len.
    """

    eta_max: float
    eta_min: float
    cycle_len: int
    t_cur: int = 0

    def eta(self, t_cur=None):
        t = self.t_cur if t_cur is None else t_cur
        return cosine_eta(self.eta_max, self.eta_min, t, self.cycle_len)

    def advance(self):
        self.t_cur += 1
        if self.t_cur >= self.cycle_len:
            self.t_cur = 0  # warm restart
        return self.t_cur


def cosine_eta(eta_max, eta_min, t_cur, cycle_len):
    if cycle_len <= 0:
        raise UsageError("cycle_len must be positive")
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + math.cos(math.pi * t_cur / cycle_len))


class SgdMomentum:
    """Momentum SGD: b <- mu*b + g; theta <- theta - eta*b.

    Buffers are keyed by parameter name and persist across warm restarts.
    """

    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self.buffers = {}

    def step(self, params, eta):
        for name, p in params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {name}")
            buf = self.buffers.get(name)
            if buf is None:
                buf = np.zeros_like(p.data)
                self.buffers[name] = buf
            buf *= self.momentum
            buf += p.grad
            p.data -= eta * buf


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    if max_norm is None or max_norm <= 0:
        return 0.0
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class EmaAverage:
    """Exponential moving average of parameters.

    shadow <- gamma*shadow + (1-gamma)*live, with shadow initialized to the
    live values. applied() temporarily swaps the shadow into the live
    tensors so evaluation runs on the smoothed parameters.
    """

    def __init__(self, params, gamma):
        if not 0 <= gamma < 1:
            raise UsageError("gamma must lie in [0, 1)")
        self.gamma = gamma
        self.shadow = {name: p.data.copy() for name, p in params}

    def update(self, params):
        for name, p in params:
            s = self.shadow.get(name)
            if s is None:
                raise UsageError(f"EMA shadow was never initialized for {name}")
            if s.shape != p.data.shape:
                raise ShapeError(f"EMA shadow shape {s.shape} != live {p.data.shape} for {name}")
            s *= self.gamma
            s += (1.0 - self.gamma) * p.data

    def snapshot(self):
        return {name: arr.copy() for name, arr in self.shadow.items()}

    class _Applied:
        def __init__(self, ema, params):
            self.ema, self.params = ema, params

        def __enter__(self):
            self._saved = {}
            for name, p in self.params:
                self._saved[name] = p.data
                p.data = self.ema.shadow[name]
            return self

        def __exit__(self, *exc):
            for name, p in self.params:
                p.data = self._saved[name]
            return False

    def applied(self, params):
        return EmaAverage._Applied(self, params)


def mse_loss(pred, target):
    """Mean squared error between a prediction tensor and a target vector."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - Tensor(target)
    return ag.mean(diff * diff)


@dataclass
class Stage2Result:
    model: FusionModel
    ema: EmaAverage
    history: list
    best_params: dict          # EMA snapshot at the best validation epoch
    best_epoch: int
    best_rho: float
    train_ids: list
    val_ids: list


def split_corpus(samples, val_fraction, seed):
    """Deterministic shuffle split; validation can be empty."""
    idx = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(len(samples) * val_fraction))
    val = [samples[i] for i in idx[:n_val]]
    train = [samples[i] for i in idx[n_val:]]
    if not train:
        raise UsageError("empty training split")
    return train, val


def _augment_occlusion(sample, rng, seed):
    t_len = sample.visual.length
    span_len = max(1, int(rng.uniform(0.3, 0.6) * t_len))
    start = int(rng.integers(0, t_len - span_len + 1))
    spec = CorruptionSpec("visual", "occlusion_mask", 1.0, (start, start + span_len))
    return corrupt(sample, spec, seed)


def train_stage2(samples, cfg, encoders=None, log_path=None):
    """Minibatch SGD over the fusion model with frozen encoders.

    Per step: forward/backward, gradient clipping, momentum update at the
    current cosine eta, then an EMA update. The schedule advances once per
    epoch. Validation (on EMA parameters) feeds the best-checkpoint choice.
    """
    if not samples:
        raise UsageError("empty corpus")
    train, val = split_corpus(samples, cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 7_777)
    dims = (samples[0].visual.dim, samples[0].audio.dim, samples[0].text.dim)
    model = FusionModel(cfg, dims, np.random.default_rng(cfg.seed + 202), encoders=encoders)
    params = model.parameters()
    opt = SgdMomentum(cfg.momentum)
    schedule = CosineRestartSchedule(cfg.eta_max, cfg.eta_min, cfg.cycle_epochs)
    ema = EmaAverage(params, cfg.ema_gamma)

    history = []
    best = (None, -1, -np.inf)  # snapshot, epoch, score
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            eta = schedule.eta()
            order = rng.permutation(len(train))
            epoch_losses = []
            for b0 in range(0, len(order), cfg.batch_size):
                batch = order[b0:b0 + cfg.batch_size]
                total = None
                for idx in batch:
                    sample = train[idx]
                    if cfg.occlusion_augment > 0 and rng.random() < cfg.occlusion_augment:
                        sample = _augment_occlusion(
                            sample, rng, seed=cfg.seed * 1_000_003 + epoch * 1_009 + int(idx))
                    pred, _ = model.forward(sample)
                    term = mse_loss(pred, sample.target)
                    total = term if total is None else total + term
                loss = total * (1.0 / len(batch))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"training loss became non-finite at epoch {epoch} "
                        f"(batch starting at {b0}, eta={eta:.3e})")
                ag.backward(loss)
                clip_gradients(params, cfg.clip_norm)
                opt.step(params, eta)
                ag.zero_grads(params)
                ema.update(params)
                epoch_losses.append(value)

            val_loss = None
            val_report: Optional[PearsonReport] = None
            if val:
                with ema.applied(params), ag.no_grad():
                    val_report = evaluate(model, val)
                    val_loss = float(np.mean([
                        np.mean((model.predict(s) - s.target) ** 2) for s in val]))
                score = val_report.rho_mean if np.isfinite(val_report.rho_mean) else -val_loss
                if score > best[2]:
                    best = (ema.snapshot(), epoch, score)
            record = {
                "epoch": epoch,
                "eta": eta,
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": val_loss,
                "val_rho_mean": None if val_report is None else val_report.rho_mean,
                "val_rho_per_emotion": None if val_report is None else val_report.rho_per_emotion,
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            schedule.advance()
    finally:
        if log_fh:
            log_fh.close()

    if best[0] is None:
        best = (ema.snapshot(), cfg.epochs, -np.inf)
    return Stage2Result(
        model=model, ema=ema, history=history,
        best_params=best[0], best_epoch=best[1],
        best_rho=best[2] if val else float("nan"),
        train_ids=[s.id for s in train], val_ids=[s.id for s in val],
    )
