"""Versioned, checksummed binary checkpoints for both training stages.

Layout (little-endian):
    magic b"EMIC" | u32 version | u32 header_len | header JSON
    float64 payload, tensors in header order
    sha256 digest of everything before it (32 bytes)

The header records the stage tag, RNG seed, config snapshot, and the name,
shape and payload offset of every tensor (EMA shadow tensors included under
an "ema" flag).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .align import AlignResult, ToyEncoder
from .autograd import Tensor
from .config import config_from_dict
from .errors import DataFormatError
from .fusion import FusionModel

CKPT_MAGIC = b"EMIC"
CKPT_VERSION = 1


class CheckpointError(DataFormatError):
    pass


class ChecksumError(CheckpointError):
    pass


class CkptVersionError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass


class StageTagError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    stage: str                     # align | fusion
    seed: int
    config: dict
    tensors: dict                  # name -> float64 ndarray
    ema: Optional[dict] = None     # optional shadow parameter set

    def tensor(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise MissingTensorError(f"checkpoint has no tensor named {name!r}") from None


def save_checkpoint(path, ckpt: Checkpoint):
    if ckpt.stage not in ("align", "fusion"):
        raise StageTagError(f"unknown stage tag {ckpt.stage!r}")
    entries = [(name, False, ckpt.tensors[name]) for name in sorted(ckpt.tensors)]
    if ckpt.ema:
        entries += [(name, True, ckpt.ema[name]) for name in sorted(ckpt.ema)]
    header = {
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "tensors": [{"name": n, "ema": e, "shape": list(np.asarray(a).shape)}
                    for n, e, a in entries],
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += CKPT_MAGIC
    body += struct.pack("<II", CKPT_VERSION, len(head_bytes))
    body += head_bytes
    for _, _, arr in entries:
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(body))
        fh.write(digest)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 44:
        raise ChecksumError("checksum failure: file too short to be a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum failure: checkpoint is truncated or corrupted")
    if body[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad magic {body[:4]!r}")
    version, head_len = struct.unpack("<II", body[4:12])
    if version != CKPT_VERSION:
        raise CkptVersionError(f"unsupported checkpoint version {version}, "
                               f"expected {CKPT_VERSION}")
    header = json.loads(body[12:12 + head_len].decode("utf-8"))
    payload = body[12 + head_len:]
    tensors, ema = {}, {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        target = ema if entry["ema"] else tensors
        target[entry["name"]] = arr.astype(np.float64).reshape(shape)
    return Checkpoint(stage=header["stage"], seed=header["seed"], config=header["config"],
                      tensors=tensors, ema=ema or None)


# ---------------------------------------------------------------------------
# stage-specific packing / unpacking

def checkpoint_from_align(result: AlignResult, cfg) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in result.named_tensors().items()}
    return Checkpoint(stage="align", seed=cfg.seed, config=cfg.to_dict(), tensors=tensors)


def align_from_checkpoint(ckpt: Checkpoint) -> AlignResult:
    if ckpt.stage != "align":
        raise StageTagError(f"expected an align checkpoint, got stage {ckpt.stage!r}")
    cfg = config_from_dict(ckpt.config)

    def build(prefix, input_dim):
        enc = ToyEncoder(input_dim, cfg.embed_dim, cfg.encoder_hidden,
                         np.random.default_rng(0))
        enc.w1 = Tensor(ckpt.tensor(f"{prefix}.w1"))
        enc.b1 = Tensor(ckpt.tensor(f"{prefix}.b1"))
        enc.w2 = Tensor(ckpt.tensor(f"{prefix}.w2"))
        enc.b2 = Tensor(ckpt.tensor(f"{prefix}.b2"))
        return enc

    venc = build("encoder.visual", ckpt.tensor("encoder.visual.w1").shape[0])
    aenc = build("encoder.audio", ckpt.tensor("encoder.audio.w1").shape[0])
    vocab = Tensor(ckpt.tensor("encoder.vocab"))
    return AlignResult(venc, aenc, vocab)


def checkpoint_from_stage2(result, cfg) -> Checkpoint:
    """Pack live parameters, the best-by-validation EMA shadow, and the
    frozen encoders needed to reproduce forward passes."""
    tensors = {name: t.data.copy() for name, t in result.model.parameters()}
    if result.model.encoders:
        tensors.update({name: t.data.copy()
                        for name, t in result.model.encoders.named_tensors().items()})
    ema = {name: arr.copy() for name, arr in result.best_params.items()}
    return Checkpoint(stage="fusion", seed=cfg.seed, config=cfg.to_dict(),
                      tensors=tensors, ema=ema)


def fusion_from_checkpoint(ckpt: Checkpoint, use_ema=True) -> FusionModel:
    if ckpt.stage != "fusion":
        raise StageTagError(f"expected a fusion checkpoint, got stage {ckpt.stage!r}")
    cfg = config_from_dict(ckpt.config)
    dims = (cfg.dim_v, cfg.dim_a, cfg.dim_s)
    encoders = None
    if "encoder.visual.w1" in ckpt.tensors:
        sub = Checkpoint(stage="align", seed=ckpt.seed, config=ckpt.config,
                         tensors=ckpt.tensors)
        encoders = align_from_checkpoint(sub)
    model = FusionModel(cfg, dims, np.random.default_rng(ckpt.seed + 202), encoders=encoders)
    source = dict(ckpt.tensors)
    if use_ema and ckpt.ema:
        source.update(ckpt.ema)
    try:
        model.load_named(source)
    except KeyError as exc:
        raise MissingTensorError(f"checkpoint has no tensor named {exc.args[0]!r}") from None
    return model
