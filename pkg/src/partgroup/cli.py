"""Command-line driver: ``partgroup {partition,evaluate,synth,render}``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 some entries
failed while ``--continue-on-error`` was set.
"""
from __future__ import annotations

import argparse
import colorsys
import json
import logging
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .edges import NMS_SIGMA, nms_thin
from .errors import FormatError, GenerationError, PartGroupError, ValidationError
from .metrics import (DEFAULT_MATCH_RADIUS_FRACTION, EdgeEvalConfig, EvalReport,
                      accumulate_confusion, ap_r, edge_pr, f_measure, iou_from_confusion,
                      new_confusion, ods_ois, precision_recall, score_instances)
from .partition import PartitionConfig, partition
from .raster import (argmax_labels, as_label_grid, atomic_write_bytes, decode_raster,
                     encode_raster, load_taxonomy, sniff_kind)
from .synth import SceneConfig, gen_scene, write_scene

log = logging.getLogger("partgroup")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_PARTIAL = 0, 1, 2, 3

MANIFEST_KEYS = ("id", "seg", "edge", "gt_seg", "gt_inst", "gt_edge")
PATH_KEYS = MANIFEST_KEYS[1:]
_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class EntryError(PartGroupError):
    """A per-entry failure carrying the exit code its cause maps to."""

    def __init__(self, entry_id, cause):
        super().__init__(f"{entry_id}: {cause}")
        self.entry_id = entry_id
        self.code = exit_code_for(cause)


def exit_code_for(exc) -> int:
    if isinstance(exc, EntryError):
        return exc.code
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


# --------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    seg: Path | None = None
    edge: Path | None = None
    gt_seg: Path | None = None
    gt_inst: Path | None = None
    gt_edge: Path | None = None

    def require(self, *keys):
        missing = [k for k in keys if getattr(self, k) is None]
        if missing:
            raise ValidationError(f"entry {self.id!r} has no {', '.join(missing)}")


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a JSON Lines manifest; paths resolve against the manifest's directory."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    base = path.parent
    entries = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}:{lineno}: entry must be a JSON object")
        unknown = set(doc) - set(MANIFEST_KEYS)
        if unknown:
            raise ValidationError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
        eid = doc.get("id")
        if not isinstance(eid, str) or not _SAFE_ID.match(eid):
            raise ValidationError(f"{path}:{lineno}: id must be a plain file-name token")
        if eid in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate id {eid!r}")
        seen.add(eid)
        paths = {}
        for key in PATH_KEYS:
            val = doc.get(key)
            if val is None:
                continue
            if not isinstance(val, str) or not val:
                raise ValidationError(f"{path}:{lineno}: {key} must be a non-empty string")
            paths[key] = base / val
        entries.append(ManifestEntry(eid, **paths))
    if not entries:
        raise ValidationError("empty manifest")
    return entries


def _read(path, kind=None):
    return decode_raster(Path(path).read_bytes(), kind)


def _load_seg(path):
    """Label grid plus the score stack it came from, if any."""
    grid = _read(path)
    if grid.ndim == 3:
        return argmax_labels(grid), grid
    if grid.dtype != np.uint8:
        raise ValidationError(f"{path}: segmentation must be a label raster or score stack")
    return grid, None


def _load_edge_prob(path):
    grid = _read(path)
    if grid.ndim != 2 or grid.dtype.kind != "f":
        raise ValidationError(f"{path}: edge map must be a float raster")
    return grid


def _load_gt_edges(path):
    grid = _read(path)
    if grid.ndim != 2:
        raise ValidationError(f"{path}: edge ground truth must be a 2-D raster")
    return grid > 0


# --------------------------------------------------------------------------
# report serialisation


def _fmt(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return "null"
        s = f"{v:.6f}"
        return "0.000000" if s == "-0.000000" else s
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps_report(doc, indent: int = 2) -> str:
    """JSON with insertion-ordered keys and every float printed with 6 decimals."""

    def emit(obj, depth):
        pad = " " * (indent * (depth + 1))
        end = " " * (indent * depth)
        if isinstance(obj, dict):
            if not obj:
                return "{}"
            items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {emit(v, depth + 1)}"
                     for k, v in obj.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(obj, (list, tuple)):
            if not obj:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple)) for v in obj):
                return "[" + ", ".join(_fmt(v) for v in obj) + "]"
            return "[\n" + ",\n".join(pad + emit(v, depth + 1) for v in obj) + "\n" + end + "]"
        return _fmt(obj)

    return emit(doc, 0) + "\n"


# --------------------------------------------------------------------------
# shared plumbing


def parse_thresholds(text: str) -> tuple[float, ...]:
    """``start:step:stop`` (inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            start, step, stop = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValidationError("threshold step must be positive")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = tuple(round(start + i * step, 10) for i in range(max(n, 0)))
        else:
            values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"cannot parse thresholds {text!r}") from None
    if not values or any(not 0.0 < t < 1.0 for t in values):
        raise ValidationError("AP thresholds must be non-empty and inside (0, 1)")
    return values


def _default_jobs() -> int:
    raw = os.environ.get("PARTGROUP_JOBS", "").strip()
    if not raw:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise ValidationError(f"PARTGROUP_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ValidationError("PARTGROUP_JOBS must be >= 1")
    return jobs


def run_entries(fn, items, jobs: int, keep_going: bool):
    """Apply ``fn`` over ``items`` on a bounded pool; results keep input order.

    Returns ``(results, failures)`` where failed slots hold ``None`` and
    ``failures`` lists ``EntryError``. Without ``keep_going`` the first
    failure (in input order) is raised.
    """
    def guarded(item):
        try:
            return fn(item), None
        except (PartGroupError, GenerationError, ValueError, OSError) as exc:
            return None, EntryError(getattr(item, "id", str(item)), exc)

    if jobs <= 1 or len(items) <= 1:
        outcomes = [guarded(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(guarded, items))
    failures = [err for _, err in outcomes if err is not None]
    if failures and not keep_going:
        raise failures[0]
    return [res for res, _ in outcomes], failures


def _partition_config(args) -> PartitionConfig:
    return PartitionConfig(edge_threshold=args.edge_threshold, min_area=args.min_area,
                           min_part_labels=args.min_part_labels,
                           drop_orphans=args.drop_orphans)


# --------------------------------------------------------------------------
# partition


def cmd_partition(args) -> int:
    cfg = _partition_config(args)
    load_taxonomy(args.taxonomy)  # validate the flag even though partition is label-agnostic
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry: ManifestEntry):
        entry.require("seg", "edge")
        labels, _ = _load_seg(entry.seg)
        prob = _load_edge_prob(entry.edge)
        result = partition(labels, prob, cfg)
        atomic_write_bytes(out_dir / f"{entry.id}.pgm", encode_raster(result.instances, "instance"))
        return result.n_instances

    counts, failures = run_entries(work, entries, args.jobs, args.continue_on_error)
    failed = {f.entry_id: str(f) for f in failures}
    summary = {
        "version": __version__,
        "config": cfg.to_dict(),
        "entries": [{"id": e.id, "status": "failed" if e.id in failed else "ok",
                     "instances": c, "error": failed.get(e.id)}
                    for e, c in zip(entries, counts)],
        "failed": len(failures),
    }
    atomic_write_bytes(out_dir / "summary.json", dumps_report(summary).encode())
    for f in failures:
        log.error("entry failed: %s", f)
    return EXIT_PARTIAL if failures else EXIT_OK


# --------------------------------------------------------------------------
# evaluate


@dataclass
class _EntryEval:
    confusion: np.ndarray | None = None
    edge: object = None
    preds: list | None = None
    gt_inst: np.ndarray | None = None


def _per_image(entry_id, res: _EntryEval, thresholds):
    row = {"id": entry_id}
    if res.confusion is not None:
        row["mean_iou"] = iou_from_confusion(res.confusion)[1]
    if res.edge is not None:
        pr = res.edge
        f = f_measure(*precision_recall(pr.matched_pred, pr.total_pred, pr.matched_gt, pr.total_gt))
        row["best_f"] = float(np.max(f))
    if res.preds is not None:
        ap = ap_r(res.preds, {entry_id: res.gt_inst}, thresholds)
        row["ap_vol"] = ap.ap_vol
        row["predicted_instances"] = ap.n_pred
        row["gt_instances"] = ap.n_gt
    return row


def evaluate_entries(entries, which, taxonomy, pcfg, ecfg, ap_thresholds, score_mode="auto",
                     jobs=1, keep_going=False, per_image=False):
    """Evaluate manifest entries and build the report document."""
    want_seg = which in ("seg", "all")
    want_edge = which in ("edge", "all")
    want_inst = which in ("inst", "all")
    # fail fast on missing ground truth before any heavy work
    bad = []
    for e in entries:
        needed = ["seg"] * (want_seg or want_inst) + ["edge"] * (want_edge or want_inst)
        needed += ["gt_seg"] * want_seg + ["gt_edge"] * want_edge + ["gt_inst"] * want_inst
        missing = [k for k in dict.fromkeys(needed) if getattr(e, k) is None]
        if missing:
            bad.append(f"{e.id} (missing {', '.join(missing)})")
    if bad:
        raise ValidationError("ground truth or prediction paths missing for: " + "; ".join(bad))

    def work(entry: ManifestEntry) -> _EntryEval:
        res = _EntryEval()
        labels = stack = prob = None
        if want_seg or want_inst:
            labels, stack = _load_seg(entry.seg)
            if int(labels.max(initial=0)) >= taxonomy.K:
                raise ValidationError(f"label {int(labels.max())} outside taxonomy {taxonomy.name}")
        if want_edge or want_inst:
            prob = _load_edge_prob(entry.edge)
        if want_seg:
            gt = as_label_grid(_read(entry.gt_seg), taxonomy.K)
            res.confusion = accumulate_confusion(labels, gt, new_confusion(taxonomy.K))
        if want_edge:
            res.edge = edge_pr(nms_thin(prob), _load_gt_edges(entry.gt_edge), ecfg)
        if want_inst:
            result = partition(labels, prob, pcfg)
            scores = stack if score_mode in ("auto", "stack") else None
            if score_mode == "stack" and stack is None:
                raise ValidationError("--score stack needs score-stack segmentations")
            res.preds = score_instances(result, scores, image_id=entry.id)
            res.gt_inst = _read(entry.gt_inst, "instance")
            if res.gt_inst.shape != labels.shape:
                raise ValidationError("instance ground truth shape differs from prediction")
        return res

    results, failures = run_entries(work, entries, jobs, keep_going)
    ok = [(e, r) for e, r in zip(entries, results) if r is not None]

    report = EvalReport(class_names=taxonomy.labels)
    if want_seg and ok:
        acc = new_confusion(taxonomy.K)
        for _, r in ok:
            acc += r.confusion
        per_class, mean = iou_from_confusion(acc)
        report.per_class_iou = tuple(per_class)
        report.mean_iou = mean
        report.counts["seg_images"] = len(ok)
    if want_edge and ok:
        report.ods, report.ois = ods_ois([r.edge for _, r in ok])
        report.counts["edge_images"] = len(ok)
    if want_inst and ok:
        preds = [p for _, r in ok for p in r.preds]
        ap = ap_r(preds, {e.id: r.gt_inst for e, r in ok}, ap_thresholds)
        report.ap = dict(zip(ap.thresholds, ap.ap))
        report.ap_vol = ap.ap_vol
        report.counts.update(inst_images=len(ok), pred_instances=ap.n_pred, gt_instances=ap.n_gt)

    doc = {
        "version": __version__,
        "config": {
            "metrics": which,
            "taxonomy": taxonomy.to_dict(),
            "partition": pcfg.to_dict(),
            "edge_eval": ecfg.to_dict(),
            "nms_sigma": NMS_SIGMA,
            "ap_thresholds": list(ap_thresholds),
            "instance_score": score_mode,
        },
        "seg": report.seg_dict(),
        "edge": report.edge_dict(),
        "inst": report.inst_dict(),
    }
    if per_image:
        doc["images"] = [_per_image(e.id, r, ap_thresholds) for e, r in ok]
    if failures:
        doc["failures"] = [{"id": f.entry_id, "error": str(f)} for f in failures]
    return doc, failures


def cmd_evaluate(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    pcfg = _partition_config(args)
    ecfg = EdgeEvalConfig(match_radius_fraction=args.match_radius_fraction)
    thresholds = parse_thresholds(args.ap_thresholds)
    entries = load_manifest(args.manifest)
    doc, failures = evaluate_entries(entries, args.metrics, taxonomy, pcfg, ecfg, thresholds,
                                     score_mode=args.score, jobs=args.jobs,
                                     keep_going=args.continue_on_error,
                                     per_image=args.per_image)
    text = dumps_report(doc)
    if args.out:
        atomic_write_bytes(args.out, text.encode())
    else:
        sys.stdout.write(text)
    for f in failures:
        log.error("entry failed: %s", f)
    return EXIT_PARTIAL if failures else EXIT_OK


# --------------------------------------------------------------------------
# synth


def scene_dir_name(index: int) -> str:
    return f"scene_{index:04d}"


def cmd_synth(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scene config is not valid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ValidationError("scene config must be a JSON object")
    base = SceneConfig.from_dict(doc)
    if args.seed is not None:
        doc = {**doc, "seed": args.seed}
        base = SceneConfig.from_dict(doc)
    if args.count < 0:
        raise ValidationError("count must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.count == 0:
        log.warning("count is 0; writing an empty manifest")

    def work(i):
        cfg = SceneConfig.from_dict({**base.to_dict(), "seed": base.seed + i})
        name = scene_dir_name(i)
        files = write_scene(gen_scene(cfg), out / name)
        return {"id": name, **{k: f"{name}/{files[k]}" for k in PATH_KEYS}}

    rows, _ = run_entries(work, list(range(args.count)), args.jobs, False)
    lines = "".join(json.dumps(r) + "\n" for r in rows)
    atomic_write_bytes(out / "manifest.jsonl", lines.encode())
    return EXIT_OK


# --------------------------------------------------------------------------
# render


def label_palette(n: int = 256) -> np.ndarray:
    """Bit-interleaved colour map; index 0 is black and the first 256 colours are distinct."""
    idx = np.arange(n)
    pal = np.zeros((n, 3), dtype=np.uint8)
    c = idx.copy()
    for shift in range(7, -1, -1):
        for ch in range(3):
            pal[:, ch] |= (((c >> ch) & 1) << shift).astype(np.uint8)
        c >>= 3
    return pal


def instance_colors(ids) -> np.ndarray:
    """Golden-ratio hue walk keyed on the id; id 0 is black."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros((ids.size, 3), dtype=np.uint8)
    for i, v in enumerate(ids.tolist()):
        if v == 0:
            continue
        hue = (v * 0.6180339887498949) % 1.0
        sat = 0.55 + 0.4 * ((v * 7) % 5) / 4.0
        r, g, b = colorsys.hsv_to_rgb(hue, sat, 0.95)
        out[i] = (round(r * 255), round(g * 255), round(b * 255))
    return out


def render_grid(grid, palette: str = "auto") -> np.ndarray:
    """RGB image (H, W, 3) for any decoded raster."""
    if grid.ndim == 3:
        grid = argmax_labels(grid)
    if palette == "auto":
        palette = {"u": "labels", "i": "instances", "f": "gray"}[grid.dtype.kind]
    if palette == "gray":
        if grid.dtype.kind != "f":
            raise ValidationError("gray palette needs a float raster")
        g = np.round(np.clip(grid, 0.0, 1.0) * 255).astype(np.uint8)
        return np.repeat(g[..., None], 3, axis=2)
    if grid.dtype.kind == "f":
        raise ValidationError(f"palette {palette!r} needs an integer raster")
    if palette == "labels":
        if grid.max(initial=0) > 255:
            raise ValidationError("label palette covers ids 0..255 only")
        return label_palette()[grid.astype(np.intp)]
    if palette == "instances":
        uniq, inv = np.unique(grid, return_inverse=True)
        return instance_colors(uniq)[inv.reshape(grid.shape)]
    raise ValidationError(f"unknown palette {palette!r}")


def encode_ppm(rgb) -> bytes:
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def cmd_render(args) -> int:
    data = Path(args.raster).read_bytes()
    try:
        kind = sniff_kind(data)
    except FormatError as exc:
        raise ValidationError(f"unknown raster kind: {exc}") from None
    rgb = render_grid(decode_raster(data, kind), args.palette)
    atomic_write_bytes(args.out, encode_ppm(rgb))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _jobs(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--jobs takes an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


def _add_common(p, default_jobs):
    p.add_argument("--taxonomy", default="cihp",
                   help="cihp, pascal-person-part, or a JSON taxonomy file")
    p.add_argument("--jobs", type=_jobs, default=default_jobs,
                   help="worker threads (default: $PARTGROUP_JOBS or 1)")
    p.add_argument("--continue-on-error", action="store_true",
                   help="record failing entries and carry on (exit code 3)")


def _add_partition_flags(p):
    p.add_argument("--edge-threshold", type=float, default=0.2)
    p.add_argument("--min-area", type=int, default=30)
    p.add_argument("--min-part-labels", type=int, default=2)
    p.add_argument("--drop-orphans", action="store_true",
                   help="remove rejected regions that touch no accepted region")


def build_parser(default_jobs: int = 1) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partgroup", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="group part segmentations into person instances")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="output directory")
    _add_partition_flags(p)
    _add_common(p, default_jobs)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("evaluate", help="compute IoU, ODS/OIS and region AP")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", help="report path (default: stdout)")
    p.add_argument("--metrics", choices=("seg", "edge", "inst", "all"), default="all")
    _add_partition_flags(p)
    p.add_argument("--match-radius-fraction", type=float, default=DEFAULT_MATCH_RADIUS_FRACTION)
    p.add_argument("--ap-thresholds", default="0.1:0.1:0.9",
                   help="start:step:stop or comma list")
    p.add_argument("--score", choices=("auto", "stack", "area"), default="auto",
                   help="instance confidence: mean max class score, or area share")
    p.add_argument("--per-image", action="store_true", help="add a per-image breakdown")
    _add_common(p, default_jobs)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate synthetic scenes and a manifest")
    p.add_argument("config", nargs="?", help="scene config JSON (default: built-in defaults)")
    p.add_argument("-n", "--count", type=int, required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=_jobs, default=default_jobs)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="colour-map a raster to a PPM image")
    p.add_argument("raster")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--palette", choices=("auto", "labels", "instances", "gray"), default="auto")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    try:
        default_jobs = _default_jobs()
    except ValidationError as exc:
        print(f"partgroup: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    parser = build_parser(default_jobs)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are validation errors
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="partgroup: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (PartGroupError, GenerationError, ValueError, OSError) as exc:
        print(f"partgroup: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
