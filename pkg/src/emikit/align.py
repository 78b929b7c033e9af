"""Contrastive modality-text alignment (stage 1).

Small trainable encoders embed the temporal mean of each modality's feature
stream; annotation prompts are embedded by a hashed bag-of-tokens lookup
into a learnable vocabulary table. Both paths are pulled together with a
confidence-weighted InfoNCE loss and frozen afterwards.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor, uniform_param
from .corpus import render_prompt
from .errors import DataFormatError, NumericError, UsageError
from .training import CosineRestartSchedule, SgdMomentum, clip_gradients

# words, or signed decimal numbers kept whole ("Valence=-0.25" -> "-0.25")
_TOKEN_RE = re.compile(r"-?\d+(?:\.\d+)?|[A-Za-z]+")


def tokenize(text):
    return _TOKEN_RE.findall(text)


def token_ids(text, vocab_size):
    """Stable hashed token ids (crc32 buckets), identical across runs."""
    return [zlib.crc32(tok.encode("utf-8")) % vocab_size for tok in tokenize(text)]


def encode_text_tokens(prompt, vocab_embedding):
    """Mean of the hashed tokens' embedding rows, L2-normalized: (1, d)."""
    if not prompt:
        raise UsageError("cannot encode an empty prompt")
    ids = token_ids(prompt, vocab_embedding.shape[0])
    rows = ag.take_rows(vocab_embedding, ids)
    return ag.l2norm_rows(ag.mean(rows, axis=0, keepdims=True))


class ToyEncoder:
    """Two affine maps with tanh between, final L2 row normalization."""

    def __init__(self, input_dim, embed_dim, hidden, rng):
        self.input_dim = input_dim
        self.embed_dim = embed_dim
        self.w1 = uniform_param(rng, (input_dim, hidden))
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = uniform_param(rng, (hidden, embed_dim))
        self.b2 = Tensor(np.zeros(embed_dim), requires_grad=True)

    def encode(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = ag.tanh(x @ self.w1 + self.b1)
        return ag.l2norm_rows(h @ self.w2 + self.b2)

    def parameters(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]

    def freeze(self):
        for _, p in self.parameters("x"):
            p.requires_grad = False
            p.grad = None
        return self


def confidence_weights(va_stddevs):
    """Per-sample weights 1/(1+sigma), rescaled to batch mean 1."""
    sigmas = np.asarray(va_stddevs, dtype=np.float64)
    if np.any(sigmas < 0):
        raise UsageError("va_stddev values must be non-negative")
    raw = 1.0 / (1.0 + sigmas)
    return raw / raw.mean()


@dataclass
class EmbeddingBatch:
    """Paired unit-norm embeddings; positives sit on the diagonal."""

    f_mod: Tensor  # (N, d)
    f_text: Tensor  # (N, d)
    weights: np.ndarray  # (N,)
    tau: float = 0.07

    def validate(self):
        if self.tau <= 0:
            raise UsageError(f"temperature must be positive, got {self.tau}")
        if self.f_mod.shape != self.f_text.shape:
            raise UsageError(
                f"embedding shapes differ: {self.f_mod.shape} vs {self.f_text.shape}")
        for name, t in (("f_mod", self.f_mod), ("f_text", self.f_text)):
            norms = np.linalg.norm(t.data, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise UsageError(f"{name} rows are not unit-norm")
        return self


def _weighted_nce(sim, weights):
    # -(1/N) sum_i w_i * (sim_ii - logsumexp_j sim_ij)
    n = sim.shape[0]
    shift = Tensor(np.max(sim.data, axis=1, keepdims=True))
    lse = ag.log(ag.sum(ag.exp(sim - shift), axis=1, keepdims=True)) + shift
    diag = ag.sum(sim * Tensor(np.eye(n)), axis=1, keepdims=True)
    logp = diag - lse
    return -(1.0 / n) * ag.sum(Tensor(weights.reshape(n, 1)) * logp)


def infonce_weighted(batch: EmbeddingBatch, symmetric=False):
    """Confidence-weighted InfoNCE over one modality-text pair.

    The anchor direction is modality to text; the symmetric variant adds the
    text-to-modality term.
    """
    batch.validate()
    sim = (batch.f_mod @ ag.transpose(batch.f_text)) * (1.0 / batch.tau)
    loss = _weighted_nce(sim, batch.weights)
    if symmetric:
        loss = loss + _weighted_nce(ag.transpose(sim), batch.weights)
    return loss


def retrieval_top1(text_emb, mod_emb):
    """Fraction of text rows whose most similar modality row is the pair."""
    sims = np.asarray(text_emb) @ np.asarray(mod_emb).T
    return float(np.mean(np.argmax(sims, axis=1) == np.arange(sims.shape[0])))


@dataclass
class AlignResult:
    visual_encoder: ToyEncoder
    audio_encoder: ToyEncoder
    vocab: Tensor  # (V, d)
    history: list = field(default_factory=list)

    def named_tensors(self):
        named = dict(self.visual_encoder.parameters("encoder.visual"))
        named.update(self.audio_encoder.parameters("encoder.audio"))
        named["encoder.vocab"] = self.vocab
        return named

    def encode_prompts(self, prompts):
        with ag.no_grad():
            rows = [encode_text_tokens(p, self.vocab) for p in prompts]
            return ag.concat(rows, axis=0).data.copy()

    def encode_means(self, means, modality):
        enc = self.visual_encoder if modality == "visual" else self.audio_encoder
        with ag.no_grad():
            return enc.encode(np.asarray(means)).data.copy()


def random_frozen_encoders(cfg, dims):
    """Untrained frozen encoders, the explicit stage-1 bypass."""
    rng = np.random.default_rng(cfg.seed + 101)
    venc = ToyEncoder(dims[0], cfg.embed_dim, cfg.encoder_hidden, rng)
    aenc = ToyEncoder(dims[1], cfg.embed_dim, cfg.encoder_hidden, rng)
    vocab = uniform_param(rng, (cfg.text_vocab, cfg.embed_dim), fan_in=cfg.embed_dim)
    venc.freeze()
    aenc.freeze()
    vocab.requires_grad = False
    return AlignResult(venc, aenc, vocab)


def pretrain_align(samples, annotations, cfg, log_path=None):
    """Jointly train the visual-text and audio-text contrastive paths.

    Returns an AlignResult whose parameters are frozen; re-encoding after
    the freeze is bit-identical across calls.
    """
    missing = [s.id for s in samples if s.id not in annotations]
    if missing:
        raise DataFormatError(f"annotations missing for sample ids: {missing[:5]}")

    rng = np.random.default_rng(cfg.seed + 101)
    venc = ToyEncoder(samples[0].visual.dim, cfg.embed_dim, cfg.encoder_hidden, rng)
    aenc = ToyEncoder(samples[0].audio.dim, cfg.embed_dim, cfg.encoder_hidden, rng)
    vocab = uniform_param(rng, (cfg.text_vocab, cfg.embed_dim), fan_in=cfg.embed_dim)
    params = (venc.parameters("encoder.visual") + aenc.parameters("encoder.audio")
              + [("encoder.vocab", vocab)])

    v_means = np.stack([s.visual.frames.mean(axis=0) for s in samples])
    a_means = np.stack([s.audio.frames.mean(axis=0) for s in samples])
    prompt_ids = [token_ids(render_prompt(annotations[s.id]), cfg.text_vocab) for s in samples]
    weights = confidence_weights([annotations[s.id].va_stddev for s in samples])

    schedule = CosineRestartSchedule(cfg.stage1_eta_max, cfg.stage1_eta_min, cfg.cycle_epochs)
    opt = SgdMomentum(cfg.momentum)
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.stage1_epochs + 1):
            f_text = ag.concat(
                [ag.l2norm_rows(ag.mean(ag.take_rows(vocab, ids), axis=0, keepdims=True))
                 for ids in prompt_ids], axis=0)
            f_v = venc.encode(v_means)
            f_a = aenc.encode(a_means)
            loss = (infonce_weighted(EmbeddingBatch(f_v, f_text, weights, cfg.tau),
                                     cfg.symmetric_contrast)
                    + infonce_weighted(EmbeddingBatch(f_a, f_text, weights, cfg.tau),
                                       cfg.symmetric_contrast))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"stage-1 loss became non-finite at epoch {epoch}")
            ag.backward(loss)
            clip_gradients(params, cfg.stage1_clip)
            opt.step(params, schedule.eta())
            ag.zero_grads(params)
            record = {"epoch": epoch, "eta": schedule.eta(), "loss": value}
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            schedule.advance()
    finally:
        if log_fh:
            log_fh.close()

    venc.freeze()
    aenc.freeze()
    vocab.requires_grad = False
    vocab.grad = None
    return AlignResult(venc, aenc, vocab, history)
