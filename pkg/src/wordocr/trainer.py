"""Adam training loop with CTC loss, validation checkpointing and replayable runs."""
from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ctc, imageproc, network
from .dataset import Charset
from .metrics import EvalReport

log = logging.getLogger(__name__)

CKPT_MAGIC = b"OCRFCKPT"
CKPT_VERSION = 1
CURVE_HEADER = "epoch,train_loss,val_loss,val_cer,val_wer"


class TrainingError(RuntimeError):
    pass


class CharsetMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.001
    max_epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    augment_policy: str | None = None  # JSON policy file; None -> default policies
    patience: int | None = None  # epochs without val-loss improvement before stopping
    clip_norm: float | None = None
    monitor_decoder: str = "greedy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")

    def policies(self) -> list:
        if not self.augment:
            return []
        if self.augment_policy:
            return imageproc.load_policies(self.augment_policy)
        return imageproc.default_policies()


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, 0)


def adam_step(params, grads, state: AdamState, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
    """Bias-corrected Adam. Returns new ``(params, state)``; inputs are untouched."""
    b1, b2 = betas
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameter names")
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise network.NonFiniteError(name)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, step)


@dataclass
class Checkpoint:
    config: network.NetworkConfig
    params: dict
    adam: AdamState
    charset: Charset
    epoch: int = 0
    best_val_loss: float = float("inf")

    def to_bytes(self) -> bytes:
        arrays = [(name, a) for name, a in self.params.items()]
        arrays += [("adam.m." + n, a) for n, a in self.adam.m.items()]
        arrays += [("adam.v." + n, a) for n, a in self.adam.v.items()]
        table, offset = [], 0
        for name, a in arrays:
            table.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.size * 8
        header = {
            "version": CKPT_VERSION,
            "config": self.config.to_dict(),
            "charset": list(self.charset.symbols),
            "epoch": self.epoch,
            "best_val_loss": self.best_val_loss,
            "adam_step": self.adam.step,
            "arrays": table,
        }
        head = json.dumps(header, ensure_ascii=False).encode("utf-8")
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<Q", len(head)))
        buf.write(head)
        for _, a in arrays:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:8] != CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (n,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + n].decode("utf-8"))
        if header["version"] != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        body = memoryview(data)[16 + n:]
        config = network.NetworkConfig.from_dict(header["config"])
        dtype = np.dtype(config.dtype)
        params, m, v = {}, {}, {}
        for entry in header["arrays"]:
            count = int(np.prod(entry["shape"]))
            a = np.frombuffer(body, dtype="<f8", count=count, offset=entry["offset"])
            a = a.reshape(entry["shape"]).astype(dtype)
            name = entry["name"]
            if name.startswith("adam.m."):
                m[name[7:]] = a
            elif name.startswith("adam.v."):
                v[name[7:]] = a
            else:
                params[name] = a
        return cls(config, params, AdamState(m, v, header["adam_step"]),
                   Charset(tuple(header["charset"])), header["epoch"], header["best_val_loss"])

    def save(self, path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()[:12]

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:12]

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.config, {k: a.copy() for k, a in self.params.items()},
                          AdamState({k: a.copy() for k, a in self.adam.m.items()},
                                    {k: a.copy() for k, a in self.adam.v.items()}, self.adam.step),
                          self.charset, self.epoch, self.best_val_loss)


def new_checkpoint(config: network.NetworkConfig, charset: Charset, seed: int = 0) -> Checkpoint:
    if config.num_classes != charset.num_classes:
        raise ValueError("network output width must equal charset size + 1")
    params = network.init_params(config, seed)
    return Checkpoint(config, params, AdamState.zeros_like(params), charset)


# -- epochs ------------------------------------------------------------------------

def sample_seed(seed: int, source_id: str, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(source_id.encode("utf-8")), epoch])


def _inputs(samples, policies=(), seed=0, epoch=0, cache=None):
    out = np.empty((len(samples), imageproc.CANVAS_HEIGHT, imageproc.CANVAS_WIDTH))
    for i, s in enumerate(samples):
        if policies:
            img = imageproc.compose_augmentations(policies, s.image,
                                                  sample_seed(seed, s.source_id, epoch))
            out[i] = imageproc.preprocess(img)
        elif cache is not None:
            key = id(s)
            if key not in cache:
                cache[key] = imageproc.preprocess(s.image)
            out[i] = cache[key]
        else:
            out[i] = imageproc.preprocess(s.image)
    return out


def _encode_all(charset, samples):
    labels = []
    for s in samples:
        try:
            ids = charset.encode(s.transcript)
        except ValueError as exc:
            raise CharsetMismatchError(f"{s.source_id}: {exc}") from None
        ctc.check_producible(ids, network.N_FRAMES)
        labels.append(ids)
    return labels


def batch_loss_and_grads(params, images, labels):
    """Mean CTC loss over the batch, its parameter gradients and per-sample losses."""
    logits, cache = network.forward_batch(params, images)
    B = len(labels)
    dlogits = np.empty_like(logits)
    losses = np.empty(B)
    for b in range(B):
        res = ctc.ctc_grad(logits[b], labels[b])
        losses[b] = res.loss
        dlogits[b] = res.grad_logits / B
    grads = network.backward_batch(params, cache, dlogits)
    return float(losses.mean()), grads, losses


def _clip(grads, max_norm):
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    batch_losses: list = field(default_factory=list)
    steps: int = 0


def train_epoch(state: Checkpoint, samples, epoch: int, config: TrainConfig,
                policies=None, cache=None) -> EpochLog:
    """One pass over ``samples``; updates ``state.params`` and ``state.adam`` in place."""
    if policies is None:
        policies = config.policies()
    labels = _encode_all(state.charset, samples)
    order = np.random.default_rng([config.seed, epoch]).permutation(len(samples))
    total, batch_losses, steps = 0.0, [], 0
    for bi, start in enumerate(range(0, len(order), config.batch_size)):
        idx = order[start:start + config.batch_size]
        batch = [samples[i] for i in idx]
        images = _inputs(batch, policies, config.seed, epoch, cache)
        loss, grads, losses = batch_loss_and_grads(state.params, images, [labels[i] for i in idx])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss in epoch {epoch}, batch {bi}")
        if config.clip_norm is not None:
            grads = _clip(grads, config.clip_norm)
        state.params, state.adam = adam_step(state.params, grads, state.adam,
                                             config.learning_rate,
                                             (config.beta1, config.beta2), config.eps)
        batch_losses.append(loss)
        total += float(losses.sum())
        steps += 1
    mean = total / len(samples) if samples else float("nan")
    return EpochLog(epoch, mean, batch_losses, steps)


def decode(probs, decoder: str = "greedy", beam_width: int = 10) -> list[int]:
    if decoder == "greedy":
        return ctc.greedy_decode(probs)
    if decoder == "beam":
        return ctc.beam_decode(probs, beam_width)
    raise ValueError(f"unknown decoder {decoder!r}")


def predict_probs(params, images, chunk: int = 32) -> np.ndarray:
    out = []
    for start in range(0, len(images), chunk):
        logits, _ = network.forward_batch(params, images[start:start + chunk])
        out.append(network.softmax(logits))
    return np.concatenate(out) if out else np.empty((0, network.N_FRAMES, 0))


def evaluate_split(state: Checkpoint, samples, split: str = "test", decoder: str = "greedy",
                   beam_width: int = 10, cache=None, seed=None) -> EvalReport:
    """Loss, CER and WER on un-augmented ``samples``."""
    labels = _encode_all(state.charset, samples)
    images = _inputs(samples, cache=cache)
    probs = predict_probs(state.params, images)
    losses, hyps = [], []
    for p, lab in zip(probs, labels):
        with np.errstate(divide="ignore"):
            losses.append(ctc.ctc_loss_from_log_probs(np.log(p), lab))
        hyps.append(state.charset.decode(decode(p, decoder, beam_width)))
    name = decoder if decoder == "greedy" else f"beam{beam_width}"
    return EvalReport.from_predictions(split, float(np.mean(losses)), name,
                                       [s.transcript for s in samples], hyps, seed=seed)


@dataclass
class FitResult:
    best: Checkpoint
    last: Checkpoint
    curve: list = field(default_factory=list)  # (epoch, train_loss, val_loss, val_cer, val_wer)

    def curve_csv(self) -> str:
        lines = [CURVE_HEADER]
        lines += [",".join(repr(v) for v in row) for row in self.curve]
        return "\n".join(lines) + "\n"


def fit(train_samples, val_samples, charset: Charset, net_config: network.NetworkConfig,
        config: TrainConfig, init: Checkpoint | None = None, callback=None) -> FitResult:
    """Train up to ``max_epochs``, keeping the checkpoint with minimal validation loss."""
    if config.max_epochs > 0 and not val_samples:
        raise ValueError("the validation split is empty; checkpoint selection needs it")
    state = init.copy() if init is not None else new_checkpoint(net_config, charset, config.seed)
    best = state.copy()
    policies = config.policies()
    train_cache, val_cache = {}, {}
    curve, stale = [], 0
    first = state.epoch + 1
    for epoch in range(first, first + config.max_epochs):
        elog = train_epoch(state, train_samples, epoch, config, policies, train_cache)
        state.epoch = epoch
        rep = evaluate_split(state, val_samples, "val", config.monitor_decoder, cache=val_cache)
        curve.append((epoch, elog.mean_loss, rep.loss, rep.cer, rep.wer))
        log.info("epoch %d train_loss %.4f val_loss %.4f val_cer %.4f val_wer %.4f",
                 epoch, elog.mean_loss, rep.loss, rep.cer, rep.wer)
        if callback is not None:
            callback(epoch, elog, rep)
        if rep.loss < best.best_val_loss:
            state.best_val_loss = rep.loss
            best = state.copy()
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    return FitResult(best, state, curve)
