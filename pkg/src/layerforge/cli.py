"""Command-line entry point.

Every subcommand prints one JSON result line on standard output when it
succeeds. Exit codes: 0 success, 1 user error or failed check, 2 internal
error. Set LAYERFORGE_LOG to error, info or debug for diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import dataio, evaluation, losses
from .assets import AssetError
from .compositor import CompositionError, compose_modal_stack
from .scene import SceneError
from .selftest import run_selftest

log = logging.getLogger("layerforge")


class UserError(Exception):
    """Bad input from the command line; reported with exit code 1."""


USER_ERRORS = (
    UserError,
    dataio.ConfigError,
    dataio.FormatError,
    evaluation.EvalError,
    CompositionError,
    SceneError,
    AssetError,
    losses.LossError,
    FileNotFoundError,
    NotADirectoryError,
    PermissionError,
)


def emit(result: Dict) -> None:
    print(json.dumps(result, sort_keys=True))


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    run: Dict = {}
    if args.config:
        cfg, run = dataio.load_run_config(args.config)
    else:
        cfg = dataio.PRESETS[args.preset]()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.seq_len is not None:
        overrides["seq_len"] = args.seq_len
    if args.lossy_rgb:
        overrides["lossy_rgb"] = True
    if overrides:
        cfg = replace(cfg, **overrides)
    assets = args.assets or run.get("assets")
    out = args.out or run.get("out")
    workers = args.workers if args.workers is not None else run.get("workers", 1)
    if not assets or not out:
        raise UserError("both --assets and --out are required (flag or config)")
    if not Path(assets).is_dir():
        raise UserError(f"assets directory {assets} does not exist")
    start = time.perf_counter()
    summary = dataio.generate_dataset(cfg, assets, out, workers=workers, only=args.only or None)
    elapsed = time.perf_counter() - start
    result = {"command": "generate", "wall_time_s": round(elapsed, 3), **summary}
    if not args.only:
        result["checksum"] = dataio.directory_checksum(out)
    emit(result)
    return 0


# --------------------------------------------------------------------------
# compose
# --------------------------------------------------------------------------


def cmd_compose(args) -> int:
    amodal_dir = Path(args.amodal)
    if not amodal_dir.is_dir():
        raise UserError(f"amodal directory {amodal_dir} does not exist")
    order_path = Path(args.order) if args.order else amodal_dir / "order.json"
    rank = dataio.read_order(order_path)
    amodal = dataio.read_amodal(amodal_dir)
    if amodal.shape[1] != len(rank):
        raise UserError(f"{len(rank)} ranks for {amodal.shape[1]} amodal layers")
    modal = compose_modal_stack(amodal, rank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(modal.shape[0]):
        dataio.write_png(dataio.modal_index_image(modal[t], rank), out / dataio.frame_name(t), mode="P")
    emit({"command": "compose", "frames": int(modal.shape[0]), "layers": int(modal.shape[1]), "out": str(out)})
    return 0


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def _sequence_dirs(root: Path) -> List[Path]:
    """``root`` itself if it holds PNG masks, else its subdirectories that do."""
    if not root.is_dir():
        raise UserError(f"{root} is not a directory")
    if any(root.glob("*.png")):
        return [root]
    subs = sorted(d for d in root.iterdir() if d.is_dir() and any(d.glob("*.png")))
    if not subs:
        raise UserError(f"{root} contains no PNG masks")
    return subs


def _one_hot(labels: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    if not len(ids):
        return np.zeros((labels.shape[0], 0) + labels.shape[1:], dtype=bool)
    return np.stack([labels == i for i in ids], axis=1)


def _load_pair(pred_dir: Path, gt_dir: Path):
    gt, gt_names = dataio.read_index_masks(gt_dir)
    if not pred_dir.is_dir() or not any(pred_dir.glob("*.png")):
        raise UserError(f"prediction directory {pred_dir} has no PNG masks")
    pred, pred_names = dataio.read_index_masks(pred_dir)
    if pred_names != gt_names or pred.shape != gt.shape:
        raise UserError(f"{pred_dir} and {gt_dir} are not aligned (frames or sizes differ)")
    return pred, gt


def _eval_sequence(mode: str, pred: np.ndarray, gt: np.ndarray, name: str, tol) -> Dict:
    if mode == "multi":
        gt_ids = [int(i) for i in np.unique(gt) if i != 0]
        pred_ids = [int(i) for i in np.unique(pred) if i != 0]
        rep = evaluation.eval_multi(_one_hot(pred, pred_ids), _one_hot(gt, gt_ids), tol=tol, name=name)
        d = rep.to_dict()
        d["object_ids"] = gt_ids
        d["assignment"] = [None if j is None else gt_ids[j] for j in rep.assignment]
        d["layer_ids"] = pred_ids
        return d
    if mode == "single":
        fg = gt > 0
        j = evaluation.eval_single_grouped(pred > 0, fg)
        f = float(np.mean([evaluation.contour_f(pred[t] > 0, fg[t], tol) for t in range(len(gt))]))
        return {"name": name, "j_mean": j, "f_mean": f, "jf_mean": (j + f) / 2}
    pred_boxes = [evaluation.bbox_from_mask(m > 0) for m in pred]
    gt_boxes = [evaluation.bbox_from_mask(m > 0) for m in gt]
    return {"name": name, "sr": evaluation.detection_success_rate(pred_boxes, gt_boxes)}


def cmd_eval(args) -> int:
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    if not pred_root.is_dir():
        raise UserError(f"prediction directory {pred_root} does not exist")
    gt_dirs = _sequence_dirs(gt_root)
    per_seq = []
    for gdir in gt_dirs:
        pdir = pred_root if gdir == gt_root else pred_root / gdir.name
        pred, gt = _load_pair(pdir, gdir)
        per_seq.append(_eval_sequence(args.mode, pred, gt, gdir.name, args.tolerance))
    result: Dict = {"command": "eval", "mode": args.mode, "sequences": len(per_seq)}
    if args.mode == "boxes":
        keys = per_seq[0]["sr"].keys()
        result["sr"] = {k: float(np.mean([s["sr"][k] for s in per_seq])) for k in keys}
    else:
        result["j_mean"] = float(np.mean([s["j_mean"] for s in per_seq]))
        result["f_mean"] = float(np.mean([s["f_mean"] for s in per_seq]))
        result["jf_mean"] = (result["j_mean"] + result["f_mean"]) / 2
    if args.report:
        Path(args.report).write_text(json.dumps({**result, "per_sequence": per_seq}, indent=1, sort_keys=True) + "\n")
    emit(result)
    return 0


# --------------------------------------------------------------------------
# gradcheck, flowviz, selftest
# --------------------------------------------------------------------------


GRAD_TOL = 1e-4


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UserError("--trials must be >= 1")
    worst = losses.gradcheck_suite(args.trials, args.seed, wrong_gradient=args.inject_wrong_gradient)
    verdict = {k: ("PASS" if v < GRAD_TOL else "FAIL") for k, v in worst.items()}
    for k, v in worst.items():
        log.info("%s max relative error %.3e %s", k, v, verdict[k])
    if any(v == "FAIL" for v in verdict.values()):
        for k, v in worst.items():
            print(f"{k}: max relative error {v:.3e} {verdict[k]}", file=sys.stderr)
        return 1
    emit({"command": "gradcheck", "trials": args.trials, "max_rel_error": worst, "status": verdict})
    return 0


def cmd_flowviz(args) -> int:
    flow = dataio.read_flo(args.flo)
    img = dataio.flow_to_color(flow, args.max_mag)
    dataio.write_png(img, args.out)
    mag = np.hypot(flow[..., 0], flow[..., 1])
    emit({"command": "flowviz", "out": str(args.out), "height": int(flow.shape[0]), "width": int(flow.shape[1]),
          "max_magnitude": float(mag.max())})
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(args.seed)
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        log.info("%s %s (%s)", "PASS" if ok else "FAIL", name, detail)
    if failed:
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=sys.stderr)
        return 1
    emit({"command": "selftest", "checks": {name: detail for name, _, detail in results}, "status": "PASS"})
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="layerforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML dataset config")
    src.add_argument("--preset", choices=sorted(dataio.PRESETS), default="syn-val")
    g.add_argument("--assets", help="asset directory (textures/, bg_images/, bg_clips/, silhouettes/)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--workers", type=int)
    g.add_argument("--seq-len", type=int)
    g.add_argument("--lossy-rgb", action="store_true", help="store RGB as JPEG (not byte-deterministic)")
    g.add_argument("--only", nargs="*", help="regenerate only these sequence names")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("compose", help="amodal layer PNGs + depth order -> modal index PNGs")
    c.add_argument("--amodal", required=True, help="directory with layer<k>/ subdirectories")
    c.add_argument("--order", help="order file (default: <amodal>/order.json)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compose)

    e = sub.add_parser("eval", help="score predicted masks against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mode", choices=("multi", "single", "boxes"), default="multi")
    e.add_argument("--report", help="write the full JSON report here")
    e.add_argument("--tolerance", type=float, help="contour tolerance in pixels")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="compare analytic loss gradients with finite differences")
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--inject-wrong-gradient", action="store_true", help=argparse.SUPPRESS)
    gc.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("flowviz", help="colour-code a .flo file")
    f.add_argument("--flo", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--max-mag", type=float)
    f.set_defaults(func=cmd_flowviz)

    s = sub.add_parser("selftest", help="run the built-in property checks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return p


def setup_logging() -> None:
    level = os.environ.get("LAYERFORGE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("traceback", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc} (set LAYERFORGE_LOG=debug for a traceback)", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
