"""Edit distance, character/word error rates and static FLOP counts."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EditBreakdown:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def edit_distance(reference, hypothesis) -> EditBreakdown:
    """Levenshtein alignment of ``hypothesis`` against ``reference``.

    Insertions are extra hypothesis symbols, deletions are reference symbols
    the hypothesis misses. Among equal-cost alignments the backtrace prefers
    the diagonal (match or substitution), then deletion, then insertion.
    """
    n, m = len(reference), len(hypothesis)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if reference[i - 1] == hypothesis[j - 1] else 1
            d[i, j] = min(d[i - 1, j - 1] + cost, d[i - 1, j] + 1, d[i, j - 1] + 1)

    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if reference[i - 1] == hypothesis[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                s += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditBreakdown(s, ins, dels)


def cer(pairs) -> float:
    """Total edits over total reference characters, pooled across all pairs."""
    pairs = list(pairs)
    n_chars = sum(len(ref) for ref, _ in pairs)
    if n_chars == 0:
        raise ValueError("CER is undefined with zero reference characters")
    return sum(edit_distance(ref, hyp).total for ref, hyp in pairs) / n_chars


def wer(pairs) -> float:
    """Fraction of words not predicted exactly."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("WER is undefined for an empty list")
    return sum(1 for ref, hyp in pairs if ref != hyp) / len(pairs)


# -- evaluation reports ---------------------------------------------------------

@dataclass
class SampleRow:
    ref: str
    hyp: str
    breakdown: EditBreakdown


@dataclass
class EvalReport:
    split: str
    loss: float
    cer: float
    wer: float
    decoder: str
    samples: list = field(default_factory=list)
    seed: int | None = None
    checkpoint: str | None = None

    @classmethod
    def from_predictions(cls, split, loss, decoder, refs, hyps, **meta) -> "EvalReport":
        pairs = list(zip(refs, hyps))
        rows = [SampleRow(r, h, edit_distance(r, h)) for r, h in pairs]
        return cls(split=split, loss=float(loss), cer=cer(pairs), wer=wer(pairs),
                   decoder=decoder, samples=rows, **meta)

    def to_dict(self) -> dict:
        return {
            "split": self.split, "decoder": self.decoder,
            "loss": self.loss, "cer": self.cer, "wer": self.wer,
            "samples": [{"ref": r.ref, "hyp": r.hyp, "s": r.breakdown.substitutions,
                         "i": r.breakdown.insertions, "d": r.breakdown.deletions}
                        for r in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# split={self.split} decoder={self.decoder} seed={self.seed} "
                  f"checkpoint={self.checkpoint} cer_denominator=reference_chars\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["ref", "hyp", "s", "i", "d"])
        for r in self.samples:
            b = r.breakdown
            writer.writerow([r.ref, r.hyp, b.substitutions, b.insertions, b.deletions])
        return buf.getvalue()


# -- FLOPs ---------------------------------------------------------------------

@dataclass
class FlopsEstimate:
    layers: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.layers.values())

    @property
    def millions(self) -> float:
        return self.total / 1e6


def conv_flops(k_h, k_w, c_in, c_out, h_out, w_out) -> int:
    return 2 * k_h * k_w * c_in * c_out * h_out * w_out


def affine_flops(n_in, n_out) -> int:
    return 2 * n_in * n_out


def recurrent_flops(cell: str, d_in: int, hidden: int, frames: int) -> int:
    """One direction over ``frames`` steps.

    Each gate costs two affine maps plus one activation per unit; the state
    update adds five elementwise operations per unit for either cell.
    """
    gates = {"lstm": 4, "gru": 3}[cell]
    per_gate = affine_flops(d_in, hidden) + affine_flops(hidden, hidden) + hidden
    per_step = gates * per_gate + 5 * hidden
    if cell == "lstm":
        per_step += hidden  # tanh of the new cell state
    return frames * per_step


def estimate_flops(config) -> FlopsEstimate:
    """Static per-image forward cost of the recognizer described by ``config``.

    Multiply-adds count as 2. ReLU, pooling and softmax count one operation
    per output element; biases are not counted.
    """
    from .network import IMAGE_HEIGHT, IMAGE_WIDTH, KERNEL, N_FRAMES

    est = FlopsEstimate()
    h, w, c_in = IMAGE_HEIGHT, IMAGE_WIDTH, 1
    for i, c_out in enumerate(config.conv_channels):
        est.layers[f"conv{i}"] = conv_flops(KERNEL, KERNEL, c_in, c_out, h, w)
        h, w = h // 2, w // 2
        est.layers[f"pool{i}"] = h * w * c_out
        est.layers[f"relu{i}"] = h * w * c_out
        c_in = c_out
    est.layers["height_mean"] = N_FRAMES * c_in
    d_in = c_in
    for layer in range(config.rnn_layers):
        for direction in ("fw", "bw"):
            est.layers[f"rnn{layer}_{direction}"] = recurrent_flops(
                config.cell, d_in, config.hidden, N_FRAMES)
        d_in = 2 * config.hidden
    est.layers["proj"] = N_FRAMES * affine_flops(d_in, config.num_classes)
    est.layers["softmax"] = N_FRAMES * config.num_classes
    return est
