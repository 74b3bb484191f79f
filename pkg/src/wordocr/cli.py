"""Batch command-line entry point: ``wordocr <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset, imageproc, metrics, network, trainer

log = logging.getLogger("wordocr")

BENCHMARK_HEADER = ["model", "rnn", "flops_millions",
                    "train_loss", "train_cer", "train_wer",
                    "val_loss", "val_cer", "val_wer",
                    "test_loss", "test_cer", "test_wer"]

PRESETS = {
    "small": {"conv_channels": [8, 16, 24], "hidden": 32},
    "medium": {"conv_channels": [16, 32, 48], "hidden": 64},
}


class CommandError(Exception):
    pass


# -- artifacts ----------------------------------------------------------------------

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CommandError(f"missing file: {path}") from None
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def load_ingested(data_dir):
    """Samples, charset and split written by ``ingest``."""
    data_dir = Path(data_dir)
    index = _read_json(data_dir / "samples.json")
    charset = dataset.Charset(tuple(_read_json(data_dir / "charset.json")))
    split = dataset.SplitAssignment.from_dict(_read_json(data_dir / "split.json"))
    pages: dict[str, np.ndarray] = {}
    samples = []
    for entry in index:
        path = entry["image"]
        if path not in pages:
            pages[path] = dataset.read_grayscale(data_dir / path if not Path(path).is_absolute() else path)
        x, y, w, h = entry["bbox"]
        samples.append(dataset.WordSample(pages[path][y:y + h, x:x + w].copy(),
                                          entry["text"], entry["source_id"]))
    return samples, charset, split


def _split_samples(samples, split, name):
    ids = {"train": split.train, "val": split.val, "test": split.test}[name]
    return [samples[i] for i in ids]


# -- configuration ----------------------------------------------------------------

def _load_run_config(args) -> dict:
    cfg = _read_json(args.config) if getattr(args, "config", None) else {}
    if not isinstance(cfg, dict):
        raise CommandError(f"{args.config}: run config must be a JSON object")
    return cfg


def _train_config(args, cfg) -> trainer.TrainConfig:
    kw = dict(cfg.get("train", {}))
    if cfg.get("augment_policy"):
        kw["augment_policy"] = cfg["augment_policy"]
    for name in ("batch_size", "learning_rate", "max_epochs", "patience", "clip_norm"):
        value = getattr(args, name, None)
        if value is not None:
            kw[name] = value
    if getattr(args, "augment_policy", None):
        kw["augment_policy"] = args.augment_policy
    if getattr(args, "no_augment", False):
        kw["augment"] = False
    if args.seed is not None:
        kw["seed"] = args.seed
    return trainer.TrainConfig(**kw)


def _network_config(args, cfg, charset) -> network.NetworkConfig:
    kw = dict(cfg.get("network", {}))
    kw.pop("num_classes", None)
    if getattr(args, "cell", None):
        kw["cell"] = args.cell
    if getattr(args, "hidden", None):
        kw["hidden"] = args.hidden
    if getattr(args, "conv_channels", None):
        kw["conv_channels"] = [int(c) for c in args.conv_channels.split(",")]
    return network.NetworkConfig(num_classes=charset.num_classes, **kw)


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("out")
    if not out:
        raise CommandError("an output directory is required (--out)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(args, cfg) -> Path:
    data = getattr(args, "data", None) or cfg.get("data")
    if not data:
        raise CommandError("a data directory from `ingest` is required (--data)")
    if not Path(data).is_dir():
        raise CommandError(f"data directory not found: {data}")
    return Path(data)


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = dataset.SynthConfig(alphabet_size=args.alphabet, word_count=args.words,
                              min_len=args.min_len, max_len=args.max_len,
                              noise=args.noise, seed=args.seed or 0)
    samples, _ = dataset.synth_corpus(cfg)
    out = _out_dir(args, {})
    manifest = dataset.write_synthetic_manifest(samples, out)
    print(f"wrote {len(samples)} words to {manifest}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_run_config(args)
    manifest = args.manifest or cfg.get("manifest")
    if not manifest:
        raise CommandError("--manifest is required")
    seed = args.seed if args.seed is not None else cfg.get("split_seed", 0)
    pages = dataset.load_manifest(manifest)
    records = []
    for page in pages:
        for wi, word in enumerate(page.words):
            records.append((page.image_path, wi, word))
    raw = dataset.extract_words(pages)
    kept = [(s, r) for s, r in zip(raw, records) if len(s.transcript) <= args.max_word_len]
    samples = [s for s, _ in kept]
    if not samples:
        raise CommandError("no samples left after length filtering")
    charset = dataset.build_charset(samples)
    split = dataset.split_dataset(samples, seed)

    out = _out_dir(args, cfg)
    index = [{"id": i, "source_id": s.source_id, "image": str(Path(r[0]).resolve()),
              "bbox": list(r[2].bbox), "text": s.transcript}
             for i, (s, r) in enumerate(kept)]
    _write(out / "samples.json", json.dumps(index, ensure_ascii=False, indent=1))
    charset.save(out / "charset.json")
    _write(out / "split.json", json.dumps(split.to_dict()))

    hist = Counter(len(s.transcript) for s in samples)
    print(f"samples: {len(samples)} (filtered out {len(raw) - len(samples)})")
    print(f"charset size C: {charset.size}")
    print(f"split train/val/test: {len(split.train)}/{len(split.val)}/{len(split.test)}")
    print("length histogram: " + ", ".join(f"{k}:{hist[k]}" for k in sorted(hist)))
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    data = _data_dir(args, cfg)
    out = _out_dir(args, cfg)
    samples, charset, split = load_ingested(data)
    tcfg = _train_config(args, cfg)
    ncfg = _network_config(args, cfg, charset)
    train = _split_samples(samples, split, "train")
    val = _split_samples(samples, split, "val")
    res = trainer.fit(train, val, charset, ncfg, tcfg)
    best_id = res.best.save(out / "checkpoint.ckpt")
    res.last.save(out / "last.ckpt")
    _write(out / "loss_curve.csv", res.curve_csv())
    _write(out / "train_log.json", json.dumps({
        "selection": "minimum validation loss",
        "augmentation": "online, redrawn every epoch" if tcfg.augment else "off",
        "train_config": asdict(tcfg), "network": ncfg.to_dict(),
        "best_epoch": res.best.epoch, "best_val_loss": res.best.best_val_loss,
        "epochs_run": len(res.curve), "checkpoint_id": best_id,
    }, indent=1))
    print(f"trained {len(res.curve)} epochs; best epoch {res.best.epoch} "
          f"(val loss {res.best.best_val_loss}); checkpoint {best_id}")
    return 0


def _eval_one(ckpt, samples, split_name, args, ckpt_id, out):
    rep = trainer.evaluate_split(ckpt, samples, split_name, args.decoder, args.beam_width,
                                 seed=args.seed)
    rep.checkpoint = ckpt_id
    _write(out / f"report_{split_name}.json", rep.to_json())
    _write(out / f"report_{split_name}.csv", rep.to_csv())
    print(f"{split_name}: loss {rep.loss:.6f} cer {rep.cer:.6f} wer {rep.wer:.6f}")
    return rep


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    data = _data_dir(args, cfg)
    out = _out_dir(args, cfg)
    ckpt = trainer.Checkpoint.load(args.checkpoint)
    samples, charset, split = load_ingested(data)
    if charset.symbols != ckpt.charset.symbols:
        raise CommandError("charset mismatch between checkpoint and data")
    names = ["train", "val", "test"] if args.split == "all" else [args.split]
    ckpt_id = ckpt.checkpoint_id
    for name in names:
        _eval_one(ckpt, _split_samples(samples, split, name), name, args, ckpt_id, out)
    return 0


def cmd_predict(args) -> int:
    ckpt = trainer.Checkpoint.load(args.checkpoint)
    image = imageproc.preprocess(dataset.read_grayscale(args.image))
    probs = network.forward(ckpt.params, image)
    text = ckpt.charset.decode(trainer.decode(probs, args.decoder, args.beam_width))
    sys.stdout.buffer.write(text.encode("utf-8") + b"\n")
    sys.stdout.flush()
    return 0


def _benchmark_cell(preset, cell, parts, charset, tcfg, base_network):
    row = {"model": preset, "rnn": cell.upper()}
    try:
        ncfg = network.NetworkConfig(num_classes=charset.num_classes, cell=cell,
                                     **{**base_network, **PRESETS[preset]})
        row["flops_millions"] = metrics.estimate_flops(ncfg).millions
        res = trainer.fit(parts["train"], parts["val"], charset, ncfg, tcfg)
        for name, part in parts.items():
            rep = trainer.evaluate_split(res.best, part, name, "greedy")
            row[f"{name}_loss"], row[f"{name}_cer"], row[f"{name}_wer"] = (
                rep.loss, rep.cer, rep.wer)
    except Exception as exc:  # one failing cell must not sink the grid
        log.error("benchmark cell %s/%s failed: %s", preset, cell, exc)
        row["error"] = str(exc)
    for key in BENCHMARK_HEADER:
        row.setdefault(key, float("nan"))
    return row


def run_benchmark(samples, charset, split, presets, cells, tcfg, base_network=None, jobs=1):
    """Train and evaluate every (preset, cell) pair; failures become NaN rows.

    Cells share the seed in ``tcfg`` and are independent, so ``jobs > 1``
    runs them in worker processes without changing any number.
    """
    base_network = base_network or {}
    parts = {name: _split_samples(samples, split, name) for name in ("train", "val", "test")}
    grid = [(preset, cell) for preset in presets for cell in cells]
    if jobs <= 1:
        return [_benchmark_cell(p, c, parts, charset, tcfg, base_network) for p, c in grid]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_benchmark_cell, p, c, parts, charset, tcfg, base_network)
                   for p, c in grid]
        return [f.result() for f in futures]


def benchmark_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCHMARK_HEADER)
    for row in rows:
        writer.writerow([row[k] if isinstance(row[k], str) else repr(float(row[k]))
                         for k in BENCHMARK_HEADER])
    return buf.getvalue()


def cmd_benchmark(args) -> int:
    cfg = _load_run_config(args)
    data = _data_dir(args, cfg)
    out = _out_dir(args, cfg)
    samples, charset, split = load_ingested(data)
    tcfg = _train_config(args, cfg)
    presets = args.presets.split(",")
    cells = args.cells.split(",")
    for p in presets:
        if p not in PRESETS:
            raise CommandError(f"unknown preset {p!r}; choose from {sorted(PRESETS)}")
    rows = run_benchmark(samples, charset, split, presets, cells, tcfg, jobs=args.jobs)
    _write(out / "benchmark.csv", benchmark_csv(rows))
    _write(out / "benchmark.json", json.dumps(rows, indent=1))
    print(benchmark_csv(rows), end="")
    return 1 if any("error" in r for r in rows) else 0


def augment_sheet(image, policies, seed) -> np.ndarray:
    """Original followed by one draw of each policy, side by side."""
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(seed)
    tiles = [image]
    for policy in policies:
        tiles.append(policy.apply(image, rng))
    gap = np.full((image.shape[0], 4), 255.0)
    row = [tiles[0]]
    for t in tiles[1:]:
        row += [gap, t]
    return np.clip(np.rint(np.concatenate(row, axis=1)), 0, 255).astype(np.uint8)


def cmd_augment_sheet(args) -> int:
    image = dataset.read_grayscale(args.image)
    policies = (imageproc.load_policies(args.policy) if args.policy
                else imageproc.default_policies(probability=1.0))
    sheet = augment_sheet(image, policies, args.seed or 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sheet).save(out, format="PNG")
    print(f"wrote {len(policies) + 1} tiles to {out}")
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--data", help="directory written by `ingest`")
    train_opts.add_argument("--max-epochs", dest="max_epochs", type=int)
    train_opts.add_argument("--batch-size", dest="batch_size", type=int)
    train_opts.add_argument("--learning-rate", dest="learning_rate", type=float)
    train_opts.add_argument("--patience", type=int)
    train_opts.add_argument("--clip-norm", dest="clip_norm", type=float)
    train_opts.add_argument("--augment-policy", dest="augment_policy")
    train_opts.add_argument("--no-augment", dest="no_augment", action="store_true")

    decode_opts = argparse.ArgumentParser(add_help=False)
    decode_opts.add_argument("--decoder", choices=["greedy", "beam"], default="beam")
    decode_opts.add_argument("--beam-width", dest="beam_width", type=int, default=10)

    p = argparse.ArgumentParser(prog="wordocr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic manifest")
    s.add_argument("--alphabet", type=int, default=20)
    s.add_argument("--words", type=int, default=500)
    s.add_argument("--min-len", dest="min_len", type=int, default=2)
    s.add_argument("--max-len", dest="max_len", type=int, default=8)
    s.add_argument("--noise", type=float, default=8.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="manifest -> samples, charset, split")
    s.add_argument("--manifest")
    s.add_argument("--max-word-len", dest="max_word_len", type=int, default=dataset.MAX_WORD_LEN)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common, train_opts], help="fit a recognizer")
    s.add_argument("--cell", choices=["lstm", "gru"])
    s.add_argument("--hidden", type=int)
    s.add_argument("--conv-channels", dest="conv_channels", help="e.g. 16,32,48")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common, decode_opts], help="score a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data")
    s.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common, decode_opts], help="read one word image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("benchmark", parents=[common, train_opts], help="extractor x cell grid")
    s.add_argument("--presets", default="small,medium")
    s.add_argument("--cells", default="lstm,gru")
    s.add_argument("--jobs", type=int, default=1, help="grid cells to train in parallel")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("augment-sheet", parents=[common], help="contact sheet of augmentations")
    s.add_argument("--image", required=True)
    s.add_argument("--policy")
    s.set_defaults(func=cmd_augment_sheet)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CommandError, dataset.ManifestError, trainer.CharsetMismatchError,
            trainer.TrainingError, network.NonFiniteError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
