"""File formats (Middlebury .flo, PNG masks), flow visualisation and dataset generation."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from PIL import Image

from .assets import AssetCatalog
from .compositor import SequenceRecord, compose_modal_stack, flow_frames, render_sequence
from .scene import DistRow, SceneOptions, SceneSpec, build_scene

log = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
FLO_MAX_DIM = 1 << 16


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Middlebury .flo
# --------------------------------------------------------------------------


def write_flo(flow, path) -> None:
    f = np.asarray(flow)
    if f.ndim != 3 or f.shape[2] != 2:
        raise FormatError(f"flow must be H x W x 2, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise FormatError("flow has non-finite values")
    h, w = f.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(np.ascontiguousarray(f, dtype="<f4").tobytes())


def read_flo(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if not (0 < w <= FLO_MAX_DIM and 0 < h <= FLO_MAX_DIM):
        raise FormatError(f"{path}: implausible dimensions {w} x {h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise FormatError(f"{path}: truncated, expected {need} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2).astype(np.float32)


# --------------------------------------------------------------------------
# Flow colour coding
# --------------------------------------------------------------------------


def make_colorwheel() -> np.ndarray:
    """Middlebury colour wheel (55 hues)."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[col : col + ry, 0] = 255
    wheel[col : col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel


def flow_radius(flow, max_mag: Optional[float] = None) -> np.ndarray:
    f = np.asarray(flow, dtype=np.float64)
    rad = np.hypot(f[..., 0], f[..., 1])
    norm = float(rad.max()) if max_mag is None else float(max_mag)
    if norm <= 0:
        return np.zeros_like(rad)
    return rad / norm


def flow_to_color(flow, max_mag: Optional[float] = None) -> np.ndarray:
    """Colour-code flow: hue from direction, saturation from normalised magnitude."""
    f = np.asarray(flow, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise FormatError("flow has non-finite values")
    u, v = f[..., 0], f[..., 1]
    rad = flow_radius(f, max_mag)
    wheel = make_colorwheel()
    ncols = len(wheel)
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    frac = fk - k0
    img = np.zeros(f.shape[:2] + (3,), dtype=np.uint8)
    for i in range(3):
        c = (1 - frac) * wheel[k0, i] / 255.0 + frac * wheel[k1, i] / 255.0
        inside = rad <= 1
        c = np.where(inside, 1 - rad * (1 - c), c * 0.75)
        img[..., i] = np.floor(255 * c)
    return img


# --------------------------------------------------------------------------
# PNG helpers and mask sets
# --------------------------------------------------------------------------


def davis_palette() -> List[int]:
    pal = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal.extend((r, g, b))
    return pal


_PALETTE = davis_palette()


def frame_name(t: int, suffix: str = ".png") -> str:
    return f"{t:05d}{suffix}"


def write_png(arr: np.ndarray, path, mode: Optional[str] = None) -> None:
    im = Image.fromarray(np.ascontiguousarray(arr), mode=mode)
    if mode == "P":
        im.putpalette(_PALETTE)
    im.save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("P", "L"):
            return np.asarray(im).copy()
        return np.asarray(im.convert("RGB")).copy()


def modal_index_image(modal_t: np.ndarray, depth_rank: Sequence[int]) -> np.ndarray:
    """Collapse K disjoint modal masks into one index image: 0 background, rank + 1 otherwise."""
    out = np.zeros(modal_t.shape[1:], dtype=np.uint8)
    for k, r in enumerate(depth_rank):
        out[modal_t[k].astype(bool)] = r + 1
    return out


def write_masks(modal, amodal, depth_rank, modal_dir, amodal_dir) -> List[Path]:
    """Write per-frame modal index PNGs and per-layer binary amodal PNGs.

    ``amodal_dir`` also receives ``order.json`` holding the depth ranks, which
    is needed to map modal index values back to layers.
    """
    modal = np.asarray(modal)
    amodal = np.asarray(amodal)
    modal_dir, amodal_dir = Path(modal_dir), Path(amodal_dir)
    modal_dir.mkdir(parents=True, exist_ok=True)
    written = []
    t_len, k_len = amodal.shape[:2]
    for t in range(t_len):
        p = modal_dir / frame_name(t)
        write_png(modal_index_image(modal[t], depth_rank), p, mode="P")
        written.append(p)
    for k in range(k_len):
        d = amodal_dir / f"layer{k}"
        d.mkdir(parents=True, exist_ok=True)
        for t in range(t_len):
            p = d / frame_name(t)
            write_png((amodal[t, k].astype(np.uint8) * 255), p, mode="L")
            written.append(p)
    p = amodal_dir / "order.json"
    p.write_text(json.dumps({"depth_rank": [int(r) for r in depth_rank]}) + "\n")
    written.append(p)
    return written


def read_order(path) -> List[int]:
    try:
        doc = json.loads(Path(path).read_text())
        rank = [int(r) for r in doc["depth_rank"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed order file ({exc})") from exc
    if sorted(rank) != list(range(len(rank))):
        raise FormatError(f"{path}: depth_rank {rank} is not a permutation")
    return rank


def read_amodal(amodal_dir) -> np.ndarray:
    amodal_dir = Path(amodal_dir)
    layers = sorted(
        (d for d in amodal_dir.iterdir() if d.is_dir() and d.name.startswith("layer")),
        key=lambda d: int(d.name[5:]),
    )
    if not layers:
        raise FormatError(f"{amodal_dir}: no layer directories")
    stacks = []
    for d in layers:
        files = sorted(d.glob("*.png"))
        stacks.append(np.stack([read_png(f) > 0 for f in files]))
    if len({s.shape for s in stacks}) != 1:
        raise FormatError(f"{amodal_dir}: layers differ in frame count or size")
    return np.stack(stacks, axis=1).astype(np.uint8)


def read_modal(modal_dir, depth_rank: Sequence[int]) -> np.ndarray:
    files = sorted(Path(modal_dir).glob("*.png"))
    idx = np.stack([read_png(f) for f in files])
    return np.stack([(idx == r + 1) for r in depth_rank], axis=1).astype(np.uint8)


def read_masks(modal_dir, amodal_dir) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    rank = read_order(Path(amodal_dir) / "order.json")
    return read_modal(modal_dir, rank), read_amodal(amodal_dir), rank


def read_index_masks(seq_dir) -> Tuple[np.ndarray, List[str]]:
    """Index PNGs of a directory as a ``T x H x W`` label array (sorted by name)."""
    files = sorted(Path(seq_dir).glob("*.png"))
    if not files:
        raise FormatError(f"{seq_dir}: no PNG masks")
    return np.stack([read_png(f) for f in files]), [f.stem for f in files]


# --------------------------------------------------------------------------
# Dataset configuration
# --------------------------------------------------------------------------


def _grid_rows(homo: Tuple[int, ...], tps: Tuple[int, ...]) -> Tuple[DistRow, ...]:
    rows = []
    for bg in ("homo-bg", "real-bg"):
        for motion, counts in (("homo", homo), ("homo+tps", tps)):
            for obj in ("polygon", "real-obj"):
                rows.append(DistRow(bg, motion, obj, counts))
    return tuple(rows)


@dataclass(frozen=True)
class DatasetConfig:
    rows: Tuple[DistRow, ...]
    seq_len: int = 30
    frame_size: Tuple[int, int] = (128, 224)
    master_seed: int = 0
    stationary_fraction: float = 1.0 / 3.0
    occluder_fraction: float = 0.25
    flow_gaps: Tuple[int, ...] = (1, -1)
    lossy_rgb: bool = False

    def __post_init__(self):
        if not 0 <= self.stationary_fraction <= 1 or not 0 <= self.occluder_fraction <= 1:
            raise ConfigError(f"fractions must lie in [0, 1] (stationary {self.stationary_fraction}, occluder {self.occluder_fraction})")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        if any(g == 0 or abs(g) >= self.seq_len for g in self.flow_gaps):
            raise ConfigError(f"flow gaps {self.flow_gaps} out of range")

    @property
    def total_sequences(self) -> int:
        return sum(r.total for r in self.rows)

    def counts_by_objects(self) -> Dict[int, int]:
        out: Dict[int, int] = {}
        for r in self.rows:
            for i, c in enumerate(r.counts):
                out[i + 1] = out.get(i + 1, 0) + c
        return out

    def stationary_prob(self) -> float:
        """Selection probability among homography-background sequences.

        Stationary objects need a homography background, so the rate is scaled
        to give ``stationary_fraction`` of all sequences in expectation.
        """
        total = self.total_sequences
        eligible = sum(r.total for r in self.rows if r.background == "homo-bg")
        if total == 0 or eligible == 0:
            return 0.0
        return min(1.0, self.stationary_fraction * total / eligible)

    def scene_options(self) -> SceneOptions:
        return SceneOptions(
            seq_len=self.seq_len,
            frame_size=tuple(self.frame_size),
            stationary_prob=self.stationary_prob(),
            occluder_prob=self.occluder_fraction,
        )

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["rows"] = [
            {"background": r.background, "motion": r.motion, "objects": r.objects, "counts": list(r.counts)}
            for r in self.rows
        ]
        d["frame_size"] = list(self.frame_size)
        d["flow_gaps"] = list(self.flow_gaps)
        return d


def syn_train(**kw) -> DatasetConfig:
    return DatasetConfig(rows=_grid_rows((96, 96, 96), (288, 288, 288)), **kw)


def syn_val(**kw) -> DatasetConfig:
    return DatasetConfig(rows=_grid_rows((8, 8, 8), (24, 24, 24)), **kw)


def syn_single(**kw) -> DatasetConfig:
    return DatasetConfig(rows=_grid_rows((16, 0, 0), (48, 0, 0)), **kw)


PRESETS = {"syn-train": syn_train, "syn-val": syn_val, "syn-single": syn_single}

_CONFIG_KEYS = {
    "preset",
    "rows",
    "seq_len",
    "frame_size",
    "master_seed",
    "stationary_fraction",
    "occluder_fraction",
    "flow_gaps",
    "lossy_rgb",
}
# run options accepted alongside the dataset fields (used by the command line)
RUN_KEYS = {"assets": str, "out": str, "workers": int}


def _line(node) -> int:
    return node.start_mark.line + 1


def load_config(path) -> DatasetConfig:
    """Read a YAML dataset config; errors carry ``path:line`` locations."""
    return load_run_config(path)[0]


def load_run_config(path) -> Tuple[DatasetConfig, Dict[str, Any]]:
    """Like :func:`load_config`, also returning run options (assets, out, workers)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{path}:{line}: {getattr(exc, 'problem', exc)}") from exc
    if root is None:
        root = yaml.MappingNode("tag:yaml.org,2002:map", [])
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{path}:{_line(root)}: top level must be a mapping")
    constructor = yaml.SafeLoader(text)
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    run: Dict[str, Any] = {}
    for knode, vnode in root.value:
        key = knode.value
        if key in RUN_KEYS:
            try:
                run[key] = RUN_KEYS[key](constructor.construct_object(vnode, deep=True))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{_line(vnode)}: bad value for {key!r}: {exc}") from exc
            continue
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{_line(knode)}: unknown key {key!r}")
        values[key] = constructor.construct_object(vnode, deep=True)
        lines[key] = _line(vnode)
        if key == "rows":
            lines["rows_items"] = [_line(n) for n in getattr(vnode, "value", [])]

    def fail(key: str, msg: str, line: Optional[int] = None):
        raise ConfigError(f"{path}:{line or lines.get(key, 0)}: {msg}")

    kw: Dict[str, Any] = {}
    scalars = {"seq_len": int, "master_seed": int, "stationary_fraction": float, "occluder_fraction": float, "lossy_rgb": bool}
    for key, value in values.items():
        try:
            if key in scalars:
                kw[key] = scalars[key](value)
            elif key == "frame_size":
                if not (isinstance(value, list) and len(value) == 2):
                    raise ValueError("frame_size must be [H, W]")
                kw[key] = (int(value[0]), int(value[1]))
            elif key == "flow_gaps":
                kw[key] = tuple(int(g) for g in value)
        except (TypeError, ValueError) as exc:
            fail(key, f"bad value for {key!r}: {exc}")

    rows = None
    if "rows" in values:
        if not isinstance(values["rows"], list):
            fail("rows", "rows must be a list")
        rows = []
        for i, item in enumerate(values["rows"]):
            try:
                counts = tuple(int(c) for c in item["counts"])
                rows.append(DistRow(str(item["background"]), str(item["motion"]), str(item["objects"]), counts))
            except (KeyError, TypeError, ValueError) as exc:
                fail("rows", f"bad row: {exc}", lines["rows_items"][i])
    preset = values.get("preset")
    if preset is not None and preset not in PRESETS:
        fail("preset", f"unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    if preset is None and rows is None:
        fail("rows", "config needs either 'preset' or 'rows'", 1)
    try:
        if preset is not None:
            cfg = PRESETS[preset](**kw)
            if rows is not None:
                cfg = replace(cfg, rows=tuple(rows))
        else:
            cfg = DatasetConfig(rows=tuple(rows), **kw)
    except ValueError as exc:
        msg = str(exc)
        culprit = next((k for k in ("flow_gaps", "seq_len", "stationary_fraction", "occluder_fraction") if k in values and k.split("_")[-1].rstrip("s") in msg), None)
        fail(culprit or ("preset" if preset is not None else "rows"), msg)
    return cfg, run


# --------------------------------------------------------------------------
# Dataset generation
# --------------------------------------------------------------------------


def derive_seed(master_seed: int, row: str, n_objects: int, index: int) -> int:
    """Per-sequence 64-bit seed, independent of generation order."""
    key = f"{int(master_seed)}:{row}:{int(n_objects)}:{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SequenceJob:
    name: str
    row: DistRow
    n_objects: int
    index: int
    seed: int


def sequence_jobs(cfg: DatasetConfig) -> List[SequenceJob]:
    jobs = []
    for row in cfg.rows:
        for i_obj, count in enumerate(row.counts):
            n = i_obj + 1
            for idx in range(count):
                name = f"{row.name}_{n}obj_{idx:04d}"
                jobs.append(SequenceJob(name, row, n, idx, derive_seed(cfg.master_seed, row.name, n, idx)))
    return jobs


def build_job_scene(job: SequenceJob, cfg: DatasetConfig, assets: AssetCatalog) -> SceneSpec:
    rng = np.random.default_rng(job.seed)
    return build_scene(job.row, assets, rng, job.n_objects, cfg.scene_options(), seed=job.seed)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_sequence(rec: SequenceRecord, job: SequenceJob, cfg: DatasetConfig, out_dir) -> Dict[str, Any]:
    out = Path(out_dir)
    name = job.name
    files: List[Path] = []
    img_dir = out / "JPEGImages" / name
    img_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(rec.rgb):
        if cfg.lossy_rgb:
            p = img_dir / frame_name(t, ".jpg")
            Image.fromarray(frame).save(p, format="JPEG", quality=90)
        else:
            p = img_dir / frame_name(t)
            write_png(frame, p)
        files.append(p)
    for g in cfg.flow_gaps:
        fdir = out / "Flows" / f"gap{g}" / name
        fdir.mkdir(parents=True, exist_ok=True)
        for i, t in enumerate(flow_frames(cfg.seq_len, g)):
            p = fdir / frame_name(t, ".flo")
            write_flo(rec.flows[g][i], p)
            files.append(p)
            valid = rec.flow_valid[g][i]
            if not valid.all():
                vdir = out / "FlowValid" / f"gap{g}" / name
                vdir.mkdir(parents=True, exist_ok=True)
                vp = vdir / frame_name(t)
                write_png(valid.astype(np.uint8) * 255, vp, mode="L")
                files.append(vp)
    files += write_masks(
        rec.modal, rec.amodal, rec.depth_rank, out / "Annotations_modal" / name, out / "Annotations_amodal" / name
    )
    spec = rec.spec
    manifest = {
        "name": name,
        "seed": job.seed,
        "row": {"background": job.row.background, "motion": job.row.motion, "objects": job.row.objects},
        "n_objects": job.n_objects,
        "index": job.index,
        "scene_digest": spec.digest(),
        "scene_options": asdict(cfg.scene_options()),
        "scene": spec.meta,
        "depth_rank": list(rec.depth_rank),
        "stationary_intervals": [[list(iv) for iv in l.script.stationary_intervals] for l in spec.layers],
        "occluder": spec.occluder is not None,
        "background_flow_valid": bool(spec.background.kind == "homo-bg"),
        "flow_gaps": list(cfg.flow_gaps),
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    mdir = out / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    (mdir / f"{name}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


_WORKER_ASSETS: Optional[AssetCatalog] = None


def _init_worker(assets_root: str) -> None:
    global _WORKER_ASSETS
    _WORKER_ASSETS = AssetCatalog.load(assets_root)


def _run_job(job: SequenceJob, cfg: DatasetConfig, out_dir: str, assets: Optional[AssetCatalog] = None):
    assets = assets if assets is not None else _WORKER_ASSETS
    spec = build_job_scene(job, cfg, assets)
    rec = render_sequence(spec, cfg.flow_gaps)
    m = write_sequence(rec, job, cfg, out_dir)
    return {"name": job.name, "row": job.row.name, "n_objects": job.n_objects, "seed": job.seed,
            "stationary": bool(spec.meta.get("stationary")), "occluder": m["occluder"]}


def _write_status(out: Path, state: str, cfg: DatasetConfig, done: int) -> None:
    doc = {"state": state, "expected": cfg.total_sequences, "written": done}
    (out / "status.json").write_text(json.dumps(doc, sort_keys=True) + "\n")


def generate_dataset(
    cfg: DatasetConfig,
    assets: Union[str, os.PathLike, AssetCatalog],
    out_dir,
    workers: int = 1,
    only: Optional[Iterable[str]] = None,
) -> Dict[str, Any]:
    """Render and write every configured sequence (or the named subset ``only``).

    Returns a summary with per-row counts. ``status.json`` reads ``incomplete``
    until all sequences are written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = sequence_jobs(cfg)
    if only is not None:
        wanted = set(only)
        jobs = [j for j in jobs if j.name in wanted]
        missing = wanted - {j.name for j in jobs}
        if missing:
            raise ConfigError(f"unknown sequence names: {sorted(missing)}")
    full_run = only is None
    if full_run:
        _write_status(out, "incomplete", cfg, 0)
    results = []
    try:
        if workers <= 1:
            catalog = assets if isinstance(assets, AssetCatalog) else AssetCatalog.load(assets)
            for job in jobs:
                results.append(_run_job(job, cfg, str(out), catalog))
        else:
            if isinstance(assets, AssetCatalog):
                raise ConfigError("parallel generation needs an asset directory path")
            with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(str(assets),)) as pool:
                futs = [pool.submit(_run_job, job, cfg, str(out)) for job in jobs]
                results = [f.result() for f in futs]
    except BaseException:
        if full_run:
            _write_status(out, "incomplete", cfg, len(results))
        raise
    results.sort(key=lambda r: r["name"])
    per_row: Dict[str, Dict[str, int]] = {}
    for r in results:
        per_row.setdefault(r["row"], {}).setdefault(f"{r['n_objects']}obj", 0)
        per_row[r["row"]][f"{r['n_objects']}obj"] += 1
    summary = {
        "sequences": len(results),
        "frames": len(results) * cfg.seq_len,
        "per_row": per_row,
        "per_object_count": {
            f"{n}obj": sum(1 for r in results if r["n_objects"] == n) for n in sorted({r["n_objects"] for r in results})
        },
        "stationary": sum(r["stationary"] for r in results),
        "occluder": sum(r["occluder"] for r in results),
    }
    if full_run:
        index = {"config": cfg.to_dict(), "sequences": results, "summary": summary}
        (out / "manifests").mkdir(parents=True, exist_ok=True)
        (out / "manifests" / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
        _write_status(out, "complete", cfg, len(results))
    return summary


def directory_checksum(root) -> str:
    """SHA-256 over sorted relative paths and contents of every file under ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(b"\0")
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def rerender_from_manifest(manifest: Dict[str, Any], assets: AssetCatalog) -> SceneSpec:
    """Rebuild the scene recorded in a manifest; its digest must match."""
    opts = SceneOptions(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["scene_options"].items()})
    row = DistRow(manifest["row"]["background"], manifest["row"]["motion"], manifest["row"]["objects"])
    rng = np.random.default_rng(manifest["seed"])
    spec = build_scene(row, assets, rng, manifest["n_objects"], opts, seed=manifest["seed"])
    if spec.digest() != manifest["scene_digest"]:
        raise FormatError(f"{manifest['name']}: re-rendered scene digest differs from manifest")
    return spec
