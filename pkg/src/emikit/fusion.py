"""Stage-2 fusion model: temporal encoders per modality, temporal feature
enhancement, quality-aware weighting, and a Transformer regression head.

Visual frames go through a stack of causal dilated convolutions, audio
frames through a bidirectional LSTM. Enhancement smooths the visual stream
by segment-mean pooling and gates the audio stream on adjacent-frame
differences. All streams are mapped into a shared width, weighted per
timestep by softmax-normalized quality scores, fused (weighted sum or
concatenation), and run through a small Transformer encoder whose temporal
mean feeds a sigmoid head with six outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor, uniform_param
from .errors import UsageError


# ---------------------------------------------------------------------------
# temporal encoders

class TcnStack:
    """Stacked causal dilated convolutions with per-layer residuals.

    Layer k uses dilation 2**(k-1); each layer computes
    residual(x) + relu(conv(x)), where the residual path is a 1x1 projection
    whenever the channel count changes.
    """

    def __init__(self, input_dim, channels, n_layers, kernel_width, rng):
        self.input_dim = input_dim
        self.channels = channels
        self.kernel_width = kernel_width
        self.dilations = [2 ** k for k in range(n_layers)]
        self.layers = []
        c_in = input_dim
        for dilation in self.dilations:
            layer = {
                "kernel": uniform_param(rng, (kernel_width, c_in, channels),
                                        fan_in=kernel_width * c_in),
                "bias": Tensor(np.zeros(channels), requires_grad=True),
                "proj": (uniform_param(rng, (c_in, channels)) if c_in != channels else None),
            }
            self.layers.append(layer)
            c_in = channels

    @property
    def receptive_field(self):
        return 1 + (self.kernel_width - 1) * sum(self.dilations)

    def forward(self, x):
        for layer, dilation in zip(self.layers, self.dilations):
            conv = ag.relu(ag.dilated_conv1d(x, layer["kernel"], dilation, layer["bias"]))
            res = x @ layer["proj"] if layer["proj"] is not None else x
            x = res + conv
        return x

    def parameters(self, prefix="tcn"):
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"{prefix}.{i}.kernel", layer["kernel"]))
            out.append((f"{prefix}.{i}.bias", layer["bias"]))
            if layer["proj"] is not None:
                out.append((f"{prefix}.{i}.proj", layer["proj"]))
        return out


class LstmCell:
    """Single-direction LSTM scan; gate order [input, forget, cell, output].

    The forget-gate bias starts at 1.0 to keep early memory open.
    """

    def __init__(self, input_dim, hidden, rng):
        self.hidden = hidden
        self.w_x = uniform_param(rng, (input_dim, 4 * hidden))
        self.w_h = uniform_param(rng, (hidden, 4 * hidden), fan_in=hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def scan(self, x):
        t_len = x.shape[0]
        h_dim = self.hidden
        xz = x @ self.w_x  # precompute the input contribution for all steps
        h = Tensor(np.zeros((1, h_dim)))
        c = Tensor(np.zeros((1, h_dim)))
        outputs = []
        for t in range(t_len):
            z = xz[t:t + 1] + h @ self.w_h + self.bias
            i = ag.sigmoid(z[:, 0:h_dim])
            f = ag.sigmoid(z[:, h_dim:2 * h_dim])
            g = ag.tanh(z[:, 2 * h_dim:3 * h_dim])
            o = ag.sigmoid(z[:, 3 * h_dim:4 * h_dim])
            c = f * c + i * g
            h = o * ag.tanh(c)
            outputs.append(h)
        return ag.concat(outputs, axis=0)

    def parameters(self, prefix):
        return [(f"{prefix}.w_x", self.w_x), (f"{prefix}.w_h", self.w_h),
                (f"{prefix}.bias", self.bias)]


class BiLstm:
    """Forward and backward scans concatenated per timestep (width 2H)."""

    def __init__(self, input_dim, hidden, rng):
        self.hidden = hidden
        self.fwd = LstmCell(input_dim, hidden, rng)
        self.bwd = LstmCell(input_dim, hidden, rng)

    def forward(self, x):
        fwd = self.fwd.scan(x)
        bwd = ag.flip_rows(self.bwd.scan(ag.flip_rows(x)))
        return ag.concat([fwd, bwd], axis=1)

    def parameters(self, prefix="lstm"):
        return self.fwd.parameters(f"{prefix}.fwd") + self.bwd.parameters(f"{prefix}.bwd")


# ---------------------------------------------------------------------------
# temporal feature enhancement

@dataclass
class SegmentPlan:
    """M ordered, disjoint index ranges covering [0, T), sizes differ by <= 1."""

    n_segments: int
    boundaries: list  # [(start, end), ...] half-open

    @classmethod
    def for_length(cls, t_len, n_segments):
        if n_segments < 1:
            raise UsageError("segment count must be at least 1")
        if n_segments > t_len:
            raise UsageError(f"cannot split {t_len} frames into {n_segments} segments")
        base, rem = divmod(t_len, n_segments)
        bounds, start = [], 0
        for m in range(n_segments):
            size = base + (1 if m < rem else 0)
            bounds.append((start, start + size))
            start += size
        return cls(n_segments, bounds)

    def index_map(self):
        t_len = self.boundaries[-1][1]
        idx = np.empty(t_len, dtype=np.intp)
        for m, (s, e) in enumerate(self.boundaries):
            idx[s:e] = m
        return idx


def segment_pool(h, plan: SegmentPlan):
    """Per-segment feature means plus their repeat-upsampled (T, C) view."""
    pooled = ag.concat([ag.mean(h[s:e], axis=0, keepdims=True)
                        for s, e in plan.boundaries], axis=0)
    upsampled = ag.take_rows(pooled, plan.index_map())
    return pooled, upsampled


class GatedAttention:
    """Sigmoid gate on [h_t ; h_t - h_{t-1}], applied elementwise to h_t.

    The difference at t=0 is defined as zero.
    """

    def __init__(self, width, rng):
        self.width = width
        self.w_g = uniform_param(rng, (2 * width, width))

    def forward(self, h):
        t_len = h.shape[0]
        mask = np.ones((t_len, 1))
        mask[0, 0] = 0.0
        delta = (h - ag.shift_rows(h, 1)) * Tensor(mask)
        alpha = ag.sigmoid(ag.concat([h, delta], axis=1) @ self.w_g)
        return alpha * h

    def parameters(self, prefix="gate"):
        return [(f"{prefix}.w_g", self.w_g)]


# ---------------------------------------------------------------------------
# shared-space mapping, quality scoring, transformer head

class ModalityMap:
    """Two-layer projection into the shared fusion width."""

    def __init__(self, input_dim, hidden, output_dim, rng, activation="tanh"):
        if activation not in ("tanh", "linear"):
            raise UsageError(f"unknown activation {activation!r}")
        self.activation = activation
        self.w1 = uniform_param(rng, (input_dim, hidden))
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = uniform_param(rng, (hidden, output_dim))
        self.b2 = Tensor(np.zeros(output_dim), requires_grad=True)

    def forward(self, x):
        h = x @ self.w1 + self.b1
        if self.activation == "tanh":
            h = ag.tanh(h)
        return h @ self.w2 + self.b2

    def parameters(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


class QualityScorer:
    """Per-timestep scalar quality score from mapped features."""

    def __init__(self, input_dim, hidden, rng):
        self.w1 = uniform_param(rng, (input_dim, hidden))
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = uniform_param(rng, (hidden, 1))
        self.b2 = Tensor(np.zeros(1), requires_grad=True)

    def forward(self, x):
        return ag.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def parameters(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


def layer_norm(x, gain, bias, eps=1e-5):
    mu = ag.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ag.mean(centered * centered, axis=-1, keepdims=True)
    return (centered / ag.sqrt(var + Tensor(eps))) * gain + bias


def sinusoidal_positions(t_len, d_model):
    pos = np.arange(t_len)[:, None]
    i = np.arange(d_model)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    enc = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


class TransformerLayer:
    """Post-norm encoder layer: multi-head self-attention then a relu MLP."""

    def __init__(self, d_model, n_heads, d_ff, rng):
        if d_model % n_heads != 0:
            raise UsageError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = uniform_param(rng, (d_model, d_model))
        self.w_k = uniform_param(rng, (d_model, d_model))
        self.w_v = uniform_param(rng, (d_model, d_model))
        self.w_o = uniform_param(rng, (d_model, d_model))
        self.b_q = Tensor(np.zeros(d_model), requires_grad=True)
        self.b_k = Tensor(np.zeros(d_model), requires_grad=True)
        self.b_v = Tensor(np.zeros(d_model), requires_grad=True)
        self.b_o = Tensor(np.zeros(d_model), requires_grad=True)
        self.ln1_g = Tensor(np.ones(d_model), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(d_model), requires_grad=True)
        self.ln2_g = Tensor(np.ones(d_model), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(d_model), requires_grad=True)
        self.ff_w1 = uniform_param(rng, (d_model, d_ff))
        self.ff_b1 = Tensor(np.zeros(d_ff), requires_grad=True)
        self.ff_w2 = uniform_param(rng, (d_ff, d_model))
        self.ff_b2 = Tensor(np.zeros(d_model), requires_grad=True)

    def _attend(self, x):
        q = x @ self.w_q + self.b_q
        k = x @ self.w_k + self.b_k
        v = x @ self.w_v + self.b_v
        scale = 1.0 / np.sqrt(self.d_head)
        heads = []
        for h in range(self.n_heads):
            sl = slice(h * self.d_head, (h + 1) * self.d_head)
            scores = (q[:, sl] @ ag.transpose(k[:, sl])) * scale
            heads.append(ag.softmax_rows(scores) @ v[:, sl])
        return ag.concat(heads, axis=1) @ self.w_o + self.b_o

    def forward(self, x):
        x = layer_norm(x + self._attend(x), self.ln1_g, self.ln1_b)
        ff = ag.relu(x @ self.ff_w1 + self.ff_b1) @ self.ff_w2 + self.ff_b2
        return layer_norm(x + ff, self.ln2_g, self.ln2_b)

    def parameters(self, prefix):
        names = ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
                 "ln1_g", "ln1_b", "ln2_g", "ln2_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2")
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


class TransformerEncoder:
    def __init__(self, d_model, n_heads, n_layers, d_ff, rng):
        self.d_model = d_model
        self.layers = [TransformerLayer(d_model, n_heads, d_ff, rng) for _ in range(n_layers)]
        self._pos_cache = {}

    def forward(self, x):
        t_len = x.shape[0]
        pos = self._pos_cache.get(t_len)
        if pos is None:
            pos = sinusoidal_positions(t_len, self.d_model)
            self._pos_cache[t_len] = pos
        x = x + Tensor(pos)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def parameters(self, prefix="tr"):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.parameters(f"{prefix}.{i}"))
        return out


# ---------------------------------------------------------------------------
# quality weights + full model

@dataclass
class QualityWeights:
    """Per-timestep fusion weights; absent modalities hold None."""

    beta_v: Optional[np.ndarray]
    beta_a: Optional[np.ndarray]
    beta_s: Optional[np.ndarray]
    q_v: Optional[np.ndarray] = None
    q_a: Optional[np.ndarray] = None
    q_s: Optional[float] = None

    def stack(self):
        return np.stack([b for b in (self.beta_v, self.beta_a, self.beta_s)
                         if b is not None], axis=1)


def quality_weights(scores):
    """Softmax across the per-modality score columns at each timestep."""
    q = ag.concat(scores, axis=1)
    return ag.softmax_rows(q)


class FusionModel:
    """Trimodal intensity regressor over a configurable modality subset."""

    def __init__(self, cfg, dims, rng, encoders=None):
        cfg.validate()
        self.cfg = cfg
        self.dims = tuple(dims)
        self.modalities = cfg.modality_set()
        self.encoders = encoders
        d_v = encoders.visual_encoder.embed_dim if encoders else dims[0]
        d_a = encoders.audio_encoder.embed_dim if encoders else dims[1]
        d_s = dims[2]
        d_sh = cfg.d_shared

        self.tcn = self.bilstm = self.gate = None
        self.maps = {}
        self.scorers = {}
        if "v" in self.modalities:
            self.tcn = TcnStack(d_v, cfg.tcn_channels, cfg.tcn_layers, cfg.tcn_kernel, rng)
            self.maps["v"] = ModalityMap(cfg.tcn_channels, cfg.map_hidden, d_sh, rng)
        if "a" in self.modalities:
            self.bilstm = BiLstm(d_a, cfg.lstm_hidden, rng)
            self.gate = GatedAttention(2 * cfg.lstm_hidden, rng)
            self.maps["a"] = ModalityMap(2 * cfg.lstm_hidden, cfg.map_hidden, d_sh, rng)
        if "t" in self.modalities:
            self.maps["t"] = ModalityMap(d_s, cfg.map_hidden, d_sh, rng)
        if cfg.use_qam:
            for m in self.modalities:
                self.scorers[m] = QualityScorer(d_sh, cfg.quality_hidden, rng)

        d_model = d_sh * (len(self.modalities) if cfg.fusion_mode == "concat" else 1)
        self.transformer = TransformerEncoder(
            d_model, cfg.transformer_heads, cfg.transformer_layers, cfg.transformer_ff, rng)
        self.head_w = uniform_param(rng, (d_model, 6))
        self.head_b = Tensor(np.zeros(6), requires_grad=True)

    # ---- forward -----------------------------------------------------

    def _streams(self, sample):
        streams = {}
        if "v" in self.modalities:
            x = Tensor(sample.visual.frames)
            if self.encoders:
                x = self.encoders.visual_encoder.encode(x)
            h = self.tcn.forward(x)
            if self.cfg.use_tfe:
                plan = SegmentPlan.for_length(h.shape[0],
                                              min(self.cfg.segments, h.shape[0]))
                _, h = segment_pool(h, plan)
            streams["v"] = self.maps["v"].forward(h)
        if "a" in self.modalities:
            x = Tensor(sample.audio.frames)
            if self.encoders:
                x = self.encoders.audio_encoder.encode(x)
            h = self.bilstm.forward(x)
            if self.cfg.use_tfe:
                h = self.gate.forward(h)
            streams["a"] = self.maps["a"].forward(h)
        if "t" in self.modalities:
            has_frames = "v" in self.modalities or "a" in self.modalities
            t_len = sample.visual.length if has_frames else 1
            mapped = self.maps["t"].forward(Tensor(sample.text.frames))
            streams["t"] = ag.take_rows(mapped, np.zeros(t_len, dtype=np.intp))
        return streams

    def forward(self, sample):
        """Returns the (6,) prediction tensor and the fusion weights."""
        streams = self._streams(sample)
        order = [m for m in ("v", "a", "t") if m in streams]
        t_len = streams[order[0]].shape[0]

        if self.cfg.use_qam:
            # the text stream has identical rows, so its score is constant over t
            scores = [self.scorers[m].forward(streams[m]) for m in order]
            beta = quality_weights(scores)
            betas = {m: beta[:, i:i + 1] for i, m in enumerate(order)}
            raw_scores = {m: scores[i] for i, m in enumerate(order)}
        else:
            uniform = Tensor(np.full((t_len, 1), 1.0 / len(order)))
            betas = {m: uniform for m in order}
            raw_scores = {}

        weighted = [betas[m] * streams[m] for m in order]
        if self.cfg.fusion_mode == "concat":
            fused = ag.concat(weighted, axis=1)
        else:
            fused = weighted[0]
            for w in weighted[1:]:
                fused = fused + w

        z = self.transformer.forward(fused)
        logits = ag.mean(z, axis=0, keepdims=True) @ self.head_w + self.head_b
        pred = ag.sigmoid(logits)[0]

        def col(m):
            return betas[m].data[:, 0].copy() if m in betas else None

        def score_col(m):
            return raw_scores[m].data[:, 0].copy() if m in raw_scores else None

        qs = score_col("t")
        weights = QualityWeights(
            beta_v=col("v"), beta_a=col("a"), beta_s=col("t"),
            q_v=score_col("v"), q_a=score_col("a"),
            q_s=None if qs is None else float(qs[0]),
        )
        return pred, weights

    def predict(self, sample):
        with ag.no_grad():
            pred, _ = self.forward(sample)
        return pred.data.copy()

    def fusion_weights(self, sample):
        with ag.no_grad():
            _, weights = self.forward(sample)
        return weights

    # ---- parameter plumbing -------------------------------------------

    def parameters(self):
        out = []
        if self.tcn is not None:
            out.extend(self.tcn.parameters("tcn"))
        if self.bilstm is not None:
            out.extend(self.bilstm.parameters("lstm"))
        if self.gate is not None:
            out.extend(self.gate.parameters("gate"))
        for m in sorted(self.maps):
            out.extend(self.maps[m].parameters(f"map_{m}"))
        for m in sorted(self.scorers):
            out.extend(self.scorers[m].parameters(f"score_{m}"))
        out.extend(self.transformer.parameters("tr"))
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def named_tensors(self):
        named = dict(self.parameters())
        if self.encoders:
            named.update(self.encoders.named_tensors())
        return named

    def load_named(self, tensors, missing_ok=False):
        for name, p in self.parameters():
            if name not in tensors:
                if missing_ok:
                    continue
                raise KeyError(name)
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise UsageError(
                    f"checkpoint tensor {name} has shape {arr.shape}, expected {p.data.shape}")
            p.data = arr.copy()
