"""Asset catalog: textures, background images, background clips and silhouettes.

On disk a catalog is a directory::

    textures/*.png           RGB texture images
    bg_images/*.png          RGB background images
    bg_clips/<name>/NNNNN.png  RGB frame clips
    silhouettes/*.png        8-bit grayscale masks, nonzero = object

:func:`make_procedural_assets` writes a small synthetic catalog so the engine
can run without external datasets.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class AssetError(RuntimeError):
    pass


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def _image_files(d: Path) -> List[Path]:
    if not d.is_dir():
        return []
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class AssetCatalog:
    textures: List[np.ndarray] = field(default_factory=list)
    bg_images: List[np.ndarray] = field(default_factory=list)
    bg_clips: List[np.ndarray] = field(default_factory=list)  # each (N, H, W, 3)
    silhouettes: List[np.ndarray] = field(default_factory=list)
    names: Dict[str, List[str]] = field(default_factory=dict)
    digest: str = ""

    @classmethod
    def load(cls, root) -> "AssetCatalog":
        root = Path(root)
        if not root.is_dir():
            raise AssetError(f"asset directory not found: {root}")
        h = hashlib.sha256()
        names: Dict[str, List[str]] = {k: [] for k in ("textures", "bg_images", "bg_clips", "silhouettes")}

        def track(p: Path) -> None:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())

        textures, bg_images, silhouettes, clips = [], [], [], []
        for p in _image_files(root / "textures"):
            track(p)
            textures.append(_load_rgb(p))
            names["textures"].append(p.name)
        for p in _image_files(root / "bg_images"):
            track(p)
            bg_images.append(_load_rgb(p))
            names["bg_images"].append(p.name)
        for p in _image_files(root / "silhouettes"):
            track(p)
            m = _load_mask(p)
            if m.any():
                silhouettes.append(m)
                names["silhouettes"].append(p.name)
        clip_root = root / "bg_clips"
        if clip_root.is_dir():
            for d in sorted(q for q in clip_root.iterdir() if q.is_dir()):
                files = _image_files(d)
                if not files:
                    continue
                for p in files:
                    track(p)
                frames = [_load_rgb(p) for p in files]
                if len({f.shape for f in frames}) != 1:
                    raise AssetError(f"clip {d.name} has frames of differing size")
                clips.append(np.stack(frames))
                names["bg_clips"].append(d.name)
        return cls(textures, bg_images, clips, silhouettes, names, h.hexdigest())

    def require(self, kind: str) -> None:
        if not getattr(self, kind):
            raise AssetError(f"asset catalog has no {kind}")

    def name(self, kind: str, idx: int) -> str:
        lst = self.names.get(kind, [])
        return lst[idx] if idx < len(lst) else f"{kind}[{idx}]"


# --------------------------------------------------------------------------
# Procedural catalog
# --------------------------------------------------------------------------


def smooth_noise_image(rng: np.random.Generator, shape: Tuple[int, int], sigmas=(12.0, 4.0)) -> np.ndarray:
    """Band-limited colour noise with a colour gradient, as uint8 RGB."""
    h, w = shape
    out = np.zeros((h, w, 3))
    for weight, sigma in zip((1.0, 0.5), sigmas):
        noise = rng.standard_normal((h, w, 3))
        layer = ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
        layer /= layer.std() + 1e-12
        out += weight * layer
    yy, xx = np.mgrid[0:h, 0:w]
    base = rng.uniform(0, 1, size=(2, 3))
    grad = base[0] * (xx / w)[..., None] + base[1] * (yy / h)[..., None]
    out = out / (out.std() + 1e-12) * 0.18 + grad + rng.uniform(0.1, 0.4, size=3)
    out = (out - out.min()) / (out.max() - out.min() + 1e-12)
    return np.round(25 + 205 * out).astype(np.uint8)


def blob_mask(rng: np.random.Generator, size: int = 96, crescent: bool = False) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    r = np.hypot(xx, yy) / (size / 2.0)
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), 6, mode="wrap")
    noise /= np.abs(noise).max() + 1e-12
    m = r + 0.35 * noise < 0.75
    if crescent:
        off = rng.uniform(0.25, 0.45) * size
        ang = rng.uniform(0, 2 * np.pi)
        r2 = np.hypot(xx - off * np.cos(ang), yy - off * np.sin(ang)) / (size / 2.0)
        m &= r2 > 0.6
    lab, n = ndimage.label(m, structure=np.ones((3, 3)))
    if n == 0:
        m = r < 0.5
    else:
        sizes = ndimage.sum(m, lab, range(1, n + 1))
        m = lab == (1 + int(np.argmax(sizes)))
    return m


def make_procedural_assets(
    root,
    seed: int = 0,
    n_textures: int = 6,
    n_bg_images: int = 4,
    n_clips: int = 2,
    clip_len: int = 90,
    clip_size: Tuple[int, int] = (144, 240),
    n_silhouettes: int = 6,
) -> Path:
    """Write a small synthetic asset catalog under ``root`` and return it."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for sub in ("textures", "bg_images", "bg_clips", "silhouettes"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i in range(n_textures):
        img = smooth_noise_image(rng, (192, 192), sigmas=(8.0, 3.0))
        Image.fromarray(img).save(root / "textures" / f"tex_{i:03d}.png")
    for i in range(n_bg_images):
        img = smooth_noise_image(rng, (256, 352))
        Image.fromarray(img).save(root / "bg_images" / f"bg_{i:03d}.png")
    ch, cw = clip_size
    for c in range(n_clips):
        big = smooth_noise_image(rng, (ch + 80, cw + 80))
        clip_dir = root / "bg_clips" / f"clip_{c:03d}"
        clip_dir.mkdir(exist_ok=True)
        # slow pan along a smooth path, like a camera drifting over a scene
        phase = rng.uniform(0, 2 * np.pi, size=2)
        for t in range(clip_len):
            oy = int(round(40 + 35 * np.sin(2 * np.pi * t / clip_len + phase[0])))
            ox = int(round(40 + 35 * np.sin(2 * np.pi * t / clip_len + phase[1])))
            frame = big[oy : oy + ch, ox : ox + cw]
            Image.fromarray(frame).save(clip_dir / f"{t:05d}.png")
    for i in range(n_silhouettes):
        m = blob_mask(rng, crescent=(i % 3 == 2))
        Image.fromarray((m * 255).astype(np.uint8), mode="L").save(root / "silhouettes" / f"sil_{i:03d}.png")
    return root
