"""Command-line front end: convert, train, eval, drift, aut.

Input layout for ``convert``: files may sit directly in the input directory
or under ``<label>/`` and optionally ``<label>/<year>/`` subdirectories; the
first path component becomes the label and any all-digit component the year.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import binfmt, evalkit, manifest
from .config import RunConfig
from .imager import ConvertConfig, MalImage, convert_apk, convert_dex, convert_pe
from .imager.convert import EmptyInput
from .manifest import ManifestRow
from .promptmodule import PromptClassifier, SingleClassDataset, fit, stack_inputs
from .tensorcore import ShapeMismatch

log = logging.getLogger("psam")

MODEL_META_VERSION = 1


class MissingImages(ValueError):
    pass


class CliError(Exception):
    """Expected failure: message goes to stderr, exit code 1."""


# ---------------------------------------------------------------- convert


def convert_file(path: Path, config: ConvertConfig) -> MalImage:
    data = path.read_bytes()
    suffix = path.suffix.lower()
    if suffix == ".apk":
        return convert_apk(data, config)
    if suffix == ".dex":
        return convert_dex(data, config)
    return convert_pe(data, config)


def _label_and_year(rel: Path) -> tuple[str, int | None]:
    parts = rel.parts[:-1]
    label = parts[0] if parts else "unknown"
    year = next((int(p) for p in parts if p.isdigit()), None)
    return label, year


def _split_for(digest: str, test_fraction: float) -> str:
    return "test" if int(digest[:8], 16) / 0xFFFFFFFF < test_fraction else "train"


def _thread_cap() -> int:
    raw = os.environ.get("PSAM_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def cmd_convert(input_dir: Path, out_dir: Path, cfg: RunConfig) -> int:
    files = sorted(p for p in input_dir.rglob("*") if p.is_file())
    if not files:
        raise CliError(f"no input files under {input_dir}")
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        try:
            return path, convert_file(path, cfg.convert), None
        except (binfmt.BinfmtError, EmptyInput, OSError, ValueError) as exc:
            return path, None, f"{type(exc).__name__}: {exc}"

    # results are consumed in sorted input order, so the schedule cannot change outputs
    with ThreadPoolExecutor(max_workers=_thread_cap()) as pool:
        results = list(pool.map(work, files))

    rows: list[ManifestRow] = []
    errors: list[tuple[str, str]] = []
    seen: set[str] = set()
    for path, image, err in results:
        rel = path.relative_to(input_dir)
        if err is not None:
            log.warning("convert failed for %s: %s", rel, err)
            errors.append((rel.as_posix(), err))
            continue
        digest = image.meta["source_digest"]
        if digest in seen:
            log.warning("skipping duplicate content %s", rel)
            continue
        seen.add(digest)
        image.save_png(images_dir / f"{digest}.png")
        image.save_sidecar(images_dir / f"{digest}.json")
        label, year = _label_and_year(rel)
        family = label if label not in (evalkit.MALWARE, evalkit.BENIGN, "unknown") else None
        rows.append(
            ManifestRow(
                digest=digest,
                path=f"images/{digest}.png",
                label=label,
                family=family,
                year=year,
                split=_split_for(digest, cfg.test_fraction),
                source=rel.as_posix(),
            )
        )

    manifest.write(out_dir / "manifest.csv", rows)
    with open(out_dir / "errors.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source", "error"])
        writer.writerows(errors)
    print(f"converted {len(rows)} of {len(files)} files; {len(errors)} errors")
    if not rows:
        raise CliError("every input failed to convert")
    return 0


# ---------------------------------------------------------------- shared model plumbing


def _load_pixels(path: Path) -> np.ndarray:
    from PIL import Image

    if not path.exists():
        raise MissingImages(f"image file missing: {path}")
    with Image.open(path) as img:
        return np.asarray(img)


def _class_names(cfg: RunConfig, rows: list[ManifestRow]) -> list[str]:
    if cfg.task in ("detect", "drift"):
        return [evalkit.BENIGN, evalkit.MALWARE]
    return sorted({r.family or r.label for r in rows})


def _target(cfg: RunConfig, row: ManifestRow) -> str:
    return row.label if cfg.task in ("detect", "drift") else (row.family or row.label)


def _train_rows(cfg: RunConfig, rows: list[ManifestRow]) -> list[ManifestRow]:
    train = [r for r in rows if r.split == "train"]
    if cfg.task == "drift":
        years = sorted({r.year for r in train if r.year is not None})
        if not years:
            raise MissingImages("drift training needs rows with a year")
        train = [r for r in train if r.year == years[0]]
    return train


def _model_meta_path(weights: Path) -> Path:
    return weights.with_suffix(".json")


def cmd_train(manifest_path: Path, out_dir: Path, cfg: RunConfig) -> int:
    rows = manifest.read(manifest_path)
    train = _train_rows(cfg, rows)
    if not train:
        raise MissingImages("manifest has no training rows")
    classes = _class_names(cfg, rows if cfg.task == "family" else train)
    index = {name: i for i, name in enumerate(classes)}
    base = manifest_path.parent
    dataset = []
    for r in train:
        target = _target(cfg, r)
        if target not in index:
            raise CliError(f"label {target!r} is not one of {classes}")
        dataset.append((_load_pixels(base / r.path), index[target]))
    if len({y for _, y in dataset}) < 2:
        raise SingleClassDataset("training split holds a single class")

    model = PromptClassifier(cfg.model_config(len(classes)), seed=cfg.train.seed, dtype=cfg.train.dtype)
    result = fit(dataset, cfg.train, model)

    out_dir.mkdir(parents=True, exist_ok=True)
    weights = out_dir / "weights.pswt"
    model.save(weights)
    meta = {
        "format_version": MODEL_META_VERSION,
        "classes": classes,
        "config": cfg.to_dict(),
        "weights_sha256": hashlib.sha256(weights.read_bytes()).hexdigest(),
    }
    _model_meta_path(weights).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "train_acc"])
        for epoch, (loss, acc) in enumerate(zip(result.losses, result.train_acc), start=1):
            writer.writerow([epoch, repr(loss), repr(acc)])
    print(f"trained {result.epochs_run} epochs; final loss {result.losses[-1]:.6f}; weights -> {weights}")
    return 0


def _load_model(weights: Path, cfg_override: RunConfig | None) -> tuple[PromptClassifier, RunConfig, list[str]]:
    meta_path = _model_meta_path(weights)
    if not meta_path.exists():
        raise CliError(f"model description {meta_path} not found next to the weights")
    meta = json.loads(meta_path.read_text())
    cfg = cfg_override or RunConfig.from_dict(meta["config"])
    classes = meta["classes"]
    model = PromptClassifier(cfg.model_config(len(classes)), seed=cfg.train.seed, dtype=cfg.train.dtype)
    model.load(weights)
    return model, cfg, classes


def _predict_rows(model: PromptClassifier, rows: list[ManifestRow], base: Path) -> np.ndarray:
    images = [_load_pixels(base / r.path) for r in rows]
    x = stack_inputs(images, model.config.encoder.img_size, model.dtype)
    return model.predict(x)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_eval(manifest_path: Path, weights: Path, out_dir: Path, cfg_override: RunConfig | None) -> int:
    model, cfg, classes = _load_model(weights, cfg_override)
    rows = [r for r in manifest.read(manifest_path) if r.split == "test"]
    if not rows:
        raise MissingImages("manifest has no test rows")
    pred = _predict_rows(model, rows, manifest_path.parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.task in ("detect", "drift"):
        predicted = [classes[i] for i in pred]
        truth = [r.label for r in rows]
        report = evalkit.binary_metrics(evalkit.binary_counts(predicted, truth))
        _write_json(out_dir / "metrics.json", {"format_version": 1, "n": len(rows), **report.as_dict()})
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(evalkit.METRICS))
            writer.writerow(["undefined" if v is None else repr(v) for v in report.as_dict().values()])
        print(json.dumps(report.as_dict()))
    else:
        index = {name: i + 1 for i, name in enumerate(classes)}
        truth = []
        for r in rows:
            name = r.family or r.label
            if name not in index:
                raise CliError(f"test family {name!r} was not seen in training")
            truth.append(index[name])
        matrix = evalkit.confusion((pred + 1).tolist(), truth, len(classes))
        (out_dir / "confusion.csv").write_text(evalkit.matrix_to_csv(matrix, classes))
        scores = evalkit.per_family_prf(matrix)
        with open(out_dir / "per_family.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["family", "pre", "rec", "f1"])
            for name, s in zip(classes, scores):
                writer.writerow([name, *("undefined" if v is None else repr(v) for v in (s.pre, s.rec, s.f1))])
        doc = {
            "format_version": 1,
            "n": len(rows),
            "global_accuracy": evalkit.global_accuracy(matrix),
            "macro": evalkit.macro_average(scores),
        }
        _write_json(out_dir / "metrics.json", doc)
        print(json.dumps(doc))
    return 0


def cmd_drift(manifest_path: Path, weights: Path, out_dir: Path, cfg_override: RunConfig | None) -> int:
    model, cfg, classes = _load_model(weights, cfg_override)
    rows = [r for r in manifest.read(manifest_path) if r.split == "test"]
    by_year: dict[int, list[ManifestRow]] = {}
    for r in rows:
        if r.year is None:
            raise CliError(f"row {r.digest} has no year")
        by_year.setdefault(r.year, []).append(r)
    if len(by_year) < 2:
        raise evalkit.TooFewSlices(f"drift needs at least 2 distinct years, got {sorted(by_year)}")

    base = manifest_path.parent

    def predict(batch: list[ManifestRow]) -> list[str]:
        return [classes[i] for i in _predict_rows(model, batch, base)]

    slices = [(year, [(r, r.label) for r in by_year[year]]) for year in sorted(by_year)]
    report = evalkit.drift_protocol(predict, slices)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "drift.csv").write_text(report.to_csv())
    (out_dir / "drift.json").write_text(report.to_json())
    print(report.to_csv(), end="")
    print("AUT " + json.dumps(report.aut))
    return 0


# ---------------------------------------------------------------- aut


def parse_series_csv(text: str) -> list[tuple[str, list[float]]]:
    """Rows of ``[label,] v1, v2, ...``; a non-numeric first cell is taken as the label."""
    out = []
    for n, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        cells = [c.strip() for c in row if c.strip()]
        if not cells or cells[0].startswith("#"):
            continue
        try:
            float(cells[0])
            label, values = f"row{n}", cells
        except ValueError:
            label, values = cells[0], cells[1:]
        try:
            series = [float(v) for v in values]
        except ValueError:
            if not out:  # header line
                continue
            raise
        out.append((label, series))
    return out


def cmd_aut(input_path: Path, out_dir: Path | None) -> int:
    rows = parse_series_csv(input_path.read_text())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series", "aut"])
    for label, series in rows:
        writer.writerow([label, f"{evalkit.compute_aut(series):.4f}"])
    text = buf.getvalue()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "aut.csv").write_text(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration JSON")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--width", type=int, choices=(256, 512, 1024), help="image width in pixels")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--f64", action="store_true", help="use 64-bit floats")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="psam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="render a directory of binaries to PNG")
    p.add_argument("input", type=Path)

    p = sub.add_parser("train", parents=[common], help="train on the manifest's train split")
    p.add_argument("--manifest", type=Path, required=True)

    for name, helptext in (("eval", "score the test split"), ("drift", "score test rows year by year, with AUT")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--weights", type=Path, required=True)

    p = sub.add_parser("aut", parents=[common], help="area under time for each row of a CSV")
    p.add_argument("input", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "aut":
            return cmd_aut(args.input, args.out)
        cfg = RunConfig.load(args.config).with_overrides(args.width, args.seed, args.f64)
        if args.command == "convert":
            return cmd_convert(args.input, args.out or Path("converted"), cfg)
        if args.command == "train":
            return cmd_train(args.manifest, args.out or Path("run"), cfg)
        override = cfg if args.config or args.seed is not None or args.f64 else None
        out = args.out or args.weights.parent
        if args.command == "eval":
            return cmd_eval(args.manifest, args.weights, out, override)
        return cmd_drift(args.manifest, args.weights, out, override)
    except (CliError, MissingImages, SingleClassDataset, ShapeMismatch, evalkit.TooFewSlices,
            manifest.ManifestError, ValueError, FileNotFoundError) as exc:
        print(f"psam {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
