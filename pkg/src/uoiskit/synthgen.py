"""Synthetic cluttered-scene generation and dataset persistence.

Scenes hold colorful textured objects (ellipses, rectangles, convex
polygons) on a dull cluttered background. Occlusion is painter's-order:
later objects overwrite earlier ones, so instance masks are the visible
pixels only. Everything is deterministic given (config, seed).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BinaryMask, ImageSize, from_dense, rle_decode
from .errors import CorruptMask, DatasetError, PlacementFailure
from .imageio import read_ppm, write_ppm
from .seeding import derive_seed, rng_from

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# An occluding object may not shave a neighbour below this many visible pixels.
MIN_VISIBLE_PIXELS = 8

_PLACEMENT_RETRIES = 60


@dataclass(frozen=True)
class SceneConfig:
    size: ImageSize = ImageSize(336, 448)
    min_objects: int = 4
    max_objects: int = 11
    shapes: tuple[str, ...] = ("ellipse", "rectangle", "polygon")
    texture_amplitude: float = 0.25
    occlusion_probability: float = 0.3
    clutter_amplitude: float = 0.15

    def __post_init__(self) -> None:
        if self.min_objects < 1:
            raise DatasetError("min_objects must be at least 1")
        if self.max_objects < self.min_objects:
            raise DatasetError("max_objects must be >= min_objects")
        unknown = set(self.shapes) - {"ellipse", "rectangle", "polygon"}
        if unknown:
            raise DatasetError(f"unknown shapes in palette: {sorted(unknown)}")


@dataclass(frozen=True, eq=False)
class Scene:
    image: np.ndarray          # (h, w, 3) uint8
    instances: tuple[BinaryMask, ...]
    foreground: BinaryMask

    @property
    def size(self) -> ImageSize:
        return self.foreground.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            np.array_equal(self.image, other.image)
            and self.instances == other.instances
            and self.foreground == other.foreground
        )


def smooth_field(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Bilinearly upsampled coarse uniform(-1, 1) grid, shape (h, w)."""
    gh = h // cell + 2
    gw = w // cell + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = grid[np.ix_(y0, x0)]
    tr = grid[np.ix_(y0, x0 + 1)]
    bl = grid[np.ix_(y0 + 1, x0)]
    br = grid[np.ix_(y0 + 1, x0 + 1)]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def _hue_to_rgb(hue: float, sat: float, val: float) -> np.ndarray:
    """Plain HSV->RGB for object colors, returning floats in [0, 255]."""
    k = (hue * 6.0) % 6.0
    c = val * sat
    x = c * (1.0 - abs(k % 2.0 - 1.0))
    sector = int(k)
    r, g, b = [
        (c, x, 0.0), (x, c, 0.0), (0.0, c, x),
        (0.0, x, c), (x, 0.0, c), (c, 0.0, x),
    ][sector % 6]
    m = val - c
    return np.array([r + m, g + m, b + m]) * 255.0


def _shape_footprint(rng: np.random.Generator, kind: str, size: ImageSize) -> np.ndarray | None:
    h, w = size.h, size.w
    r_lo = max(3.0, 0.05 * min(h, w))
    r_hi = max(r_lo + 1.0, 0.14 * min(h, w))
    r = rng.uniform(r_lo, r_hi)
    if 2 * r + 2 >= min(h, w):
        r = (min(h, w) - 3) / 2.0
    cx = rng.uniform(r, w - 1 - r)
    cy = rng.uniform(r, h - 1 - r)
    theta = rng.uniform(0.0, np.pi)

    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs - cx
    dy = ys - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)

    if kind == "ellipse":
        a = r
        b = r * rng.uniform(0.5, 1.0)
        mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    elif kind == "rectangle":
        a = r
        b = r * rng.uniform(0.45, 1.0)
        mask = (np.abs(u) <= a) & (np.abs(v) <= b)
    else:  # convex polygon: intersection of half-planes tangent to a jittered disc
        n_sides = int(rng.integers(5, 9))
        # jittered but evenly spread normals keep every angular gap below pi,
        # so the intersection is always a bounded blob around the centre
        step = 2 * np.pi / n_sides
        angles = step * np.arange(n_sides) + step * rng.uniform(-0.45, 0.45, size=n_sides)
        radii = r * rng.uniform(0.75, 1.0, size=n_sides)
        mask = np.ones((h, w), dtype=bool)
        for ang, rad in zip(angles, radii):
            nx, ny = np.cos(ang + theta), np.sin(ang + theta)
            mask &= dx * nx + dy * ny <= rad
    if not mask.any():
        return None
    return mask


def _paint_object(rng: np.random.Generator, image: np.ndarray, footprint: np.ndarray,
                  texture_amplitude: float) -> None:
    h, w = footprint.shape
    hue = rng.uniform(0.0, 1.0)
    sat = rng.uniform(0.55, 0.95)
    val = rng.uniform(0.6, 0.95)
    color = _hue_to_rgb(hue, sat, val)

    mode = rng.choice(["flat", "stripes", "speckle"])
    ys, xs = np.nonzero(footprint)
    fill = np.tile(color, (ys.size, 1))
    if mode == "stripes" and texture_amplitude > 0:
        wavelength = rng.uniform(4.0, 12.0)
        phi = rng.uniform(0.0, 2 * np.pi)
        ang = rng.uniform(0.0, np.pi)
        phase = (xs * np.cos(ang) + ys * np.sin(ang)) * (2 * np.pi / wavelength) + phi
        fill *= (1.0 + texture_amplitude * np.sin(phase))[:, None]
    elif mode == "speckle" and texture_amplitude > 0:
        field = smooth_field(rng, h, w, cell=3)
        fill *= (1.0 + texture_amplitude * field[ys, xs])[:, None]
    image[ys, xs] = np.clip(fill, 0.0, 255.0)


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Generate one scene deterministically from (config, seed).

    Objects are placed in painter's order; with probability
    `occlusion_probability` a new object may overwrite earlier ones, and the
    placement is rejected if that would leave any earlier instance with
    fewer than MIN_VISIBLE_PIXELS visible pixels. Raises PlacementFailure
    if fewer than `min_objects` objects fit after bounded retries.
    """
    rng = rng_from(seed)
    h, w = config.size.h, config.size.w

    base = rng.uniform(80.0, 140.0) + rng.uniform(-15.0, 15.0, size=3)
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = base
    if config.clutter_amplitude > 0:
        for ch in range(3):
            image[:, :, ch] += 50.0 * config.clutter_amplitude * smooth_field(rng, h, w, cell=9)
        image += 6.0 * config.clutter_amplitude * rng.standard_normal((h, w, 1))
    image = np.clip(image, 0.0, 255.0)

    n_target = int(rng.integers(config.min_objects, config.max_objects + 1))
    visible: list[np.ndarray] = []
    occupied = np.zeros((h, w), dtype=bool)

    for _ in range(n_target):
        placed = False
        for _attempt in range(_PLACEMENT_RETRIES):
            kind = str(rng.choice(list(config.shapes)))
            footprint = _shape_footprint(rng, kind, config.size)
            if footprint is None:
                continue
            overlap = bool(rng.random() < config.occlusion_probability)
            touches = bool((footprint & occupied).any())
            if touches and not overlap:
                continue
            if touches:
                shaved = [(v & ~footprint).sum() for v in visible]
                if any(s < MIN_VISIBLE_PIXELS for s in shaved):
                    continue
            for v in visible:
                v &= ~footprint
            visible.append(footprint)
            occupied |= footprint
            _paint_object(rng, image, footprint, config.texture_amplitude)
            placed = True
            break
        if not placed:
            break

    if len(visible) < config.min_objects:
        raise PlacementFailure(
            f"placed {len(visible)} of the required {config.min_objects} objects "
            f"on a {h}x{w} grid"
        )

    instances = tuple(from_dense(v) for v in visible)
    return Scene(
        image=np.clip(np.rint(image), 0, 255).astype(np.uint8),
        instances=instances,
        foreground=from_dense(occupied),
    )


def generate_dataset(config: SceneConfig, n_scenes: int, seed: int) -> list[Scene]:
    """Generate `n_scenes` scenes; scene i uses derive_seed(seed, i)."""
    return [generate_scene(config, derive_seed(seed, i)) for i in range(n_scenes)]


def mask_record(mask: BinaryMask) -> dict:
    return {"h": mask.size.h, "w": mask.size.w, "runs": list(mask.runs)}


def mask_from_record(rec: dict) -> BinaryMask:
    try:
        h, w, runs = int(rec["h"]), int(rec["w"]), [int(r) for r in rec["runs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed mask record: {rec!r}") from exc
    if any(r < 0 for r in runs) or sum(runs) != h * w:
        raise CorruptMask(f"mask runs sum to {sum(runs)}, expected {h}x{w}={h * w}")
    return BinaryMask(ImageSize(h, w), tuple(runs))


def write_dataset(scenes, path, extra: dict | None = None) -> Path:
    """Write scenes to a directory: manifest.json plus one PPM per scene.

    `extra` entries (config echo, seeds, ...) are merged into the manifest.
    Returns the manifest path.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:05d}.ppm"
        write_ppm(out / name, scene.image)
        records.append({
            "index": i,
            "image": name,
            "size": {"h": scene.size.h, "w": scene.size.w},
            "instances": [mask_record(m) for m in scene.instances],
        })
    manifest = {"version": MANIFEST_VERSION, "scene_count": len(records), "scenes": records}
    if extra:
        manifest.update(extra)
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(path) -> dict:
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or "scenes" not in manifest:
        raise DatasetError(f"manifest {manifest_path} has no scene list")
    return manifest


def read_dataset(path) -> list[Scene]:
    """Read scenes back from a dataset directory (inverse of write_dataset)."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    manifest = load_manifest(root)
    scenes = []
    for rec in manifest["scenes"]:
        image = read_ppm(root / rec["image"])
        size = ImageSize(int(rec["size"]["h"]), int(rec["size"]["w"]))
        if image.shape[:2] != (size.h, size.w):
            raise DatasetError(f"scene {rec['index']}: image shape {image.shape[:2]} "
                               f"does not match manifest size {size}")
        instances = tuple(mask_from_record(m) for m in rec["instances"])
        fg = np.zeros((size.h, size.w), dtype=bool)
        for m in instances:
            fg |= rle_decode(m)
        scenes.append(Scene(image=image, instances=instances, foreground=from_dense(fg)))
    return scenes
