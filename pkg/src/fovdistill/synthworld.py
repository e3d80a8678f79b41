"""Procedural top-down worlds, paired satellite/panorama rendering and datasets.

World frame: x east, y north, metres. Satellite pixel coordinates are
continuous (u, v) = (column, row) with pixel (r, c) covering
[c, c+1) x [r, r+1); rows grow southwards.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationFailure, InvalidArgument
from .geometry import CAMERA_HEIGHT
from .numerics import read_tensor, write_tensor

DISC, SQUARE, LINE = "disc", "square", "line"
SPLITS = ("train", "val", "test_same", "test_cross")


@dataclass(frozen=True)
class Landmark:
    kind: str
    position: tuple[float, float]
    radius: float  # disc radius, square half-side, or line half-width
    color: tuple[float, float, float]
    endpoints: tuple[tuple[float, float], tuple[float, float]] | None = None


@dataclass
class Scene:
    extent: float
    landmarks: list[Landmark]
    ground_color: tuple[float, float, float]
    sky_color: tuple[float, float, float]

    def __post_init__(self):
        self._pack()

    def _pack(self):
        n = len(self.landmarks)
        self._kind = np.array([{DISC: 0, SQUARE: 1, LINE: 2}[lm.kind] for lm in self.landmarks], dtype=int)
        self._pos = np.array([lm.position for lm in self.landmarks], dtype=float).reshape(n, 2)
        self._rad = np.array([lm.radius for lm in self.landmarks], dtype=float)
        self._col = np.array([lm.color for lm in self.landmarks], dtype=float).reshape(n, 3)
        ends = [lm.endpoints if lm.endpoints is not None else (lm.position, lm.position)
                for lm in self.landmarks]
        self._ends = np.array(ends, dtype=float).reshape(n, 2, 2)
        lo = np.minimum(self._ends[:, 0], self._ends[:, 1]) - self._rad[:, None]
        hi = np.maximum(self._ends[:, 0], self._ends[:, 1]) + self._rad[:, None]
        self._bbox = np.concatenate([lo, hi], axis=1)

    def color_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """RGB of the ground at world points; later landmarks paint over earlier ones."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.empty(x.shape + (3,))
        out[...] = self.ground_color
        if not len(self.landmarks) or x.size == 0:
            return out
        qlo = (x.min(), y.min())
        qhi = (x.max(), y.max())
        hit = ((self._bbox[:, 0] <= qhi[0]) & (self._bbox[:, 2] >= qlo[0])
               & (self._bbox[:, 1] <= qhi[1]) & (self._bbox[:, 3] >= qlo[1]))
        for i in np.flatnonzero(hit):
            inside = _inside(self._kind[i], self._pos[i], self._rad[i], self._ends[i], x, y)
            out[inside] = self._col[i]
        return out

    def distance_to_nearest(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        best = np.full(np.shape(x), np.inf)
        for i in range(len(self.landmarks)):
            best = np.minimum(best, _distance(self._kind[i], self._pos[i], self._rad[i],
                                              self._ends[i], x, y))
        return best

    def ground_view(self, jitter: float) -> "Scene":
        """Copy whose landmark colours are shifted as seen from street level.

        The shift is a fixed function of the scene, so every panorama of the
        scene shares it.
        """
        if jitter <= 0 or not self.landmarks:
            return self
        cached = getattr(self, "_ground_cache", None)
        if cached is not None and cached[0] == jitter:
            return cached[1]
        key = np.frombuffer(self._pos.tobytes(), dtype=np.uint32)[:8].tolist()
        rng = np.random.default_rng(key)
        shifts = rng.uniform(-jitter, jitter, size=(len(self.landmarks), 3))
        lms = [Landmark(lm.kind, lm.position, lm.radius,
                        tuple(float(v) for v in np.clip(np.asarray(lm.color) + d, 0.0, 1.0)), lm.endpoints)
               for lm, d in zip(self.landmarks, shifts)]
        view = Scene(self.extent, lms, self.ground_color, self.sky_color)
        self._ground_cache = (jitter, view)
        return view

    def to_json(self) -> dict:
        return {"extent": self.extent, "ground_color": list(self.ground_color),
                "sky_color": list(self.sky_color),
                "landmarks": [asdict(lm) for lm in self.landmarks]}


def _seg_dist(ends, x, y):
    (ax, ay), (bx, by) = ends
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    t = np.clip(((x - ax) * dx + (y - ay) * dy) / ll, 0.0, 1.0) if ll > 0 else 0.0
    return np.hypot(x - (ax + t * dx), y - (ay + t * dy))


def _distance(kind, pos, rad, ends, x, y):
    if kind == 0:
        return np.maximum(np.hypot(x - pos[0], y - pos[1]) - rad, 0.0)
    if kind == 1:
        ex = np.maximum(np.abs(x - pos[0]) - rad, 0.0)
        ey = np.maximum(np.abs(y - pos[1]) - rad, 0.0)
        return np.hypot(ex, ey)
    return np.maximum(_seg_dist(ends, x, y) - rad, 0.0)


def _inside(kind, pos, rad, ends, x, y):
    if kind == 0:
        return (x - pos[0]) ** 2 + (y - pos[1]) ** 2 <= rad * rad
    if kind == 1:
        return (np.abs(x - pos[0]) <= rad) & (np.abs(y - pos[1]) <= rad)
    return _seg_dist(ends, x, y) <= rad


@dataclass(frozen=True)
class SceneSpec:
    extent: float = 200.0
    n_landmarks: tuple[int, int] = (330, 370)
    grid_cells: int = 18
    radius: tuple[float, float] = (1.0, 3.0)
    n_roads: int = 3
    road_halfwidth: float = 3.5
    marking_halfwidth: float = 0.45
    dash: float = 3.0
    density_radius: float = 10.0
    margin: float = 17.5  # closest a valid camera gets to the scene border


def _clip_segment(p, q, extent):
    """Clip segment p-q to the square [0, extent]^2 (Liang-Barsky)."""
    t0, t1 = 0.0, 1.0
    d = (q[0] - p[0], q[1] - p[1])
    for k in range(2):
        for num, den in ((p[k], -d[k]), (extent - p[k], d[k])):
            if den == 0:
                if num < 0:
                    return None
                continue
            t = num / den
            if den < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
    if t0 >= t1:
        return None
    return ((p[0] + t0 * d[0], p[1] + t0 * d[1]), (p[0] + t1 * d[0], p[1] + t1 * d[1]))


def _draw_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    E = spec.extent
    count = int(rng.integers(spec.n_landmarks[0], spec.n_landmarks[1] + 1))
    ground = tuple(float(v) for v in 0.45 + 0.1 * rng.random(3))
    sky = tuple(float(v) for v in (0.75, 0.85, 0.95))
    landmarks: list[Landmark] = []
    heading = rng.uniform(0.0, math.pi)
    n_roads = min(spec.n_roads, count)
    for k in range(n_roads):
        ang = heading + (math.pi / 2 if k % 2 else 0.0) + rng.uniform(-0.25, 0.25)
        through = rng.uniform(0.2 * E, 0.8 * E, size=2)
        dvec = np.array([math.sin(ang), math.cos(ang)]) * 2 * E
        seg = _clip_segment(tuple(through - dvec), tuple(through + dvec), E)
        if seg is None:
            continue
        road_col = tuple(float(v) for v in 0.18 + 0.06 * rng.random(3))
        mid = ((seg[0][0] + seg[1][0]) / 2, (seg[0][1] + seg[1][1]) / 2)
        landmarks.append(Landmark(LINE, mid, spec.road_halfwidth, road_col, seg))
        # dashed centre markings
        length = math.hypot(seg[1][0] - seg[0][0], seg[1][1] - seg[0][1])
        ux, uy = (seg[1][0] - seg[0][0]) / length, (seg[1][1] - seg[0][1]) / length
        mark_col = (0.95, 0.95, 0.9) if rng.random() < 0.5 else (0.95, 0.8, 0.2)
        s = rng.uniform(0, 2 * spec.dash)
        while s + spec.dash < length:
            a = (seg[0][0] + ux * s, seg[0][1] + uy * s)
            b = (seg[0][0] + ux * (s + spec.dash), seg[0][1] + uy * (s + spec.dash))
            landmarks.append(Landmark(LINE, ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2),
                                      spec.marking_halfwidth, mark_col, (a, b)))
            s += 2 * spec.dash
    n_free = max(count - n_roads, 0)
    # jittered-grid placement keeps coverage even; extras fall anywhere
    cells = spec.grid_cells
    cell = E / cells
    order = rng.permutation(cells * cells)[:n_free]
    for k in range(n_free):
        r = float(rng.uniform(*spec.radius))
        if k < len(order):
            ci, cj = divmod(int(order[k]), cells)
            lo = np.array([cj * cell, ci * cell])
            pos = tuple(float(v) for v in np.clip(lo + rng.uniform(0, cell, size=2), r, E - r))
        else:
            pos = tuple(float(v) for v in rng.uniform(r, E - r, size=2))
        color = tuple(float(v) for v in rng.random(3))
        if rng.random() < 0.15:
            # painted line segment off the roads
            ang = rng.uniform(0, math.pi)
            half = rng.uniform(2.0, 6.0)
            d = np.array([math.sin(ang), math.cos(ang)]) * half
            seg = _clip_segment(tuple(np.array(pos) - d), tuple(np.array(pos) + d), E)
            if seg is not None:
                landmarks.append(Landmark(LINE, pos, spec.marking_halfwidth, color, seg))
                continue
        kind = DISC if rng.random() < 0.5 else SQUARE
        landmarks.append(Landmark(kind, pos, r, color))
    return Scene(E, landmarks, ground, sky)


def _density_ok(scene: Scene, spec: SceneSpec) -> bool:
    if not scene.landmarks:
        return False
    g = np.arange(spec.margin, spec.extent - spec.margin + 1e-9, 2.0)
    gx, gy = np.meshgrid(g, g)
    return bool(scene.distance_to_nearest(gx, gy).max() <= spec.density_radius)


def generate_scene(spec: SceneSpec, seed: int, max_attempts: int = 1000) -> Scene:
    """Draw a scene; resample until every camera position has a landmark within range."""
    if spec.n_landmarks[1] <= 0:
        raise GenerationFailure("landmark count 0 cannot satisfy the density invariant")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        scene = _draw_scene(spec, rng)
        if _density_ok(scene, spec):
            return scene
    raise GenerationFailure(f"density invariant unmet after {max_attempts} attempts (seed {seed})")


# ---------------------------------------------------------------------------
# rendering


def render_satellite(scene: Scene, patch_center, size: int = 128, res: float = 0.546875) -> np.ndarray:
    """North-up orthographic (size, size, 3) image centred on ``patch_center``."""
    cx, cy = patch_center
    half = size * res / 2
    if cx - half < 0 or cy - half < 0 or cx + half > scene.extent or cy + half > scene.extent:
        raise InvalidArgument("satellite patch outside the scene extent")
    centers = (np.arange(size) + 0.5) * res
    x = (cx - half) + centers[None, :]
    y = (cy + half) - centers[:, None]
    x, y = np.broadcast_arrays(x, y)
    return scene.color_at(x, y)


def render_panorama(scene: Scene, cam_pos, cam_yaw: float, height: float = CAMERA_HEIGHT,
                    rows: int = 64, cols: int = 256) -> np.ndarray:
    """Equirectangular view from ``cam_pos`` at ``height``; forward = ``cam_yaw`` (deg from north)."""
    cx, cy = cam_pos
    if not (0 <= cx <= scene.extent and 0 <= cy <= scene.extent):
        raise InvalidArgument("camera outside the scene extent")
    out = np.empty((rows, cols, 3))
    out[...] = scene.sky_color
    pitch = 90.0 - 180.0 * np.arange(rows) / rows
    ground = np.flatnonzero(pitch < 0)
    dist = height / np.tan(np.radians(-pitch[ground]))
    az = np.radians(360.0 * np.arange(cols) / cols - 180.0 + cam_yaw)
    x = cx + dist[:, None] * np.sin(az)[None, :]
    y = cy + dist[:, None] * np.cos(az)[None, :]
    out[ground] = scene.color_at(x, y)
    return out


# ---------------------------------------------------------------------------
# samples and datasets


def wrap_deg(theta: float) -> float:
    """Normalise to [-180, 180)."""
    return float((theta + 180.0) % 360.0 - 180.0)


@dataclass
class Sample:
    sat: np.ndarray
    pano: np.ndarray
    u: float
    v: float
    theta: float
    yaw_prior: float
    res: float
    meta: dict = field(default_factory=dict)

    def meta_json(self) -> dict:
        return {"gt_pose": {"u": self.u, "v": self.v, "theta": self.theta},
                "yaw_prior": self.yaw_prior, "res": self.res,
                "units": {"u": "satellite column (px)", "v": "satellite row (px)",
                          "theta": "deg clockwise from north", "yaw_prior": "deg"},
                **self.meta}


@dataclass(frozen=True)
class NuisanceSpec:
    """Cross-view appearance gap applied on top of the clean renders."""

    landmark_jitter: float = 0.25  # per-landmark colour shift seen from the ground
    gain: tuple[float, float] = (0.75, 1.25)
    bias: float = 0.08
    noise: float = 0.03
    sat_blur: float = 0.6  # pixels
    transients: tuple[int, int] = (0, 6)  # ground-only objects near the camera
    transient_range: float = 12.0


@dataclass(frozen=True)
class DatasetSpec:
    scene: SceneSpec = SceneSpec()
    nuisance: NuisanceSpec | None = NuisanceSpec()
    n_train: int = 2000
    n_val: int = 300
    n_test: int = 300
    n_train_scenes: int = 8
    n_cross_scenes: int = 4
    sat_size: int = 128
    sat_res: float = 0.546875
    pano_rows: int = 64
    pano_cols: int = 256
    camera_height: float = CAMERA_HEIGHT
    prior_noise: float = 45.0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        sc = {k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("scene", {}).items()}
        nu = d.pop("nuisance", None)
        if nu is not None:
            nu = NuisanceSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in nu.items()})
        return cls(scene=SceneSpec(**sc), nuisance=nu, **d)


def scene_seeds(seed: int, spec: DatasetSpec) -> tuple[list[int], list[int]]:
    """Disjoint integer seed ranges for training-area and cross-area scenes."""
    base = int(seed) * 100_000
    return ([base + i for i in range(spec.n_train_scenes)],
            [base + 50_000 + i for i in range(spec.n_cross_scenes)])


def draw_pose(spec: DatasetSpec, extent: float, rng: np.random.Generator):
    """Patch centre, camera offset from it (m), gt yaw and noisy yaw prior."""
    patch_m = spec.sat_size * spec.sat_res
    lo, hi = patch_m / 2, extent - patch_m / 2
    if hi < lo:
        raise InvalidArgument("scene smaller than one satellite patch")
    pcx, pcy = rng.uniform(lo, hi, size=2)
    # camera inside the central quarter of the satellite patch
    ox, oy = rng.uniform(-patch_m / 4, patch_m / 4, size=2)
    theta = wrap_deg(rng.uniform(-180.0, 180.0))
    prior = theta + rng.uniform(-spec.prior_noise, spec.prior_noise)
    return (pcx, pcy), (ox, oy), theta, prior


def make_sample(scene: Scene, spec: DatasetSpec, rng: np.random.Generator, meta=None) -> Sample:
    (pcx, pcy), (ox, oy), theta, prior = draw_pose(spec, scene.extent, rng)
    cam = (pcx + ox, pcy + oy)
    if spec.nuisance is None:
        sat = render_satellite(scene, (pcx, pcy), spec.sat_size, spec.sat_res)
        pano = render_panorama(scene, cam, theta, spec.camera_height, spec.pano_rows, spec.pano_cols)
    else:
        sat, pano = _render_with_gap(scene, spec, spec.nuisance, (pcx, pcy), cam, theta, rng)
    u = spec.sat_size / 2 + ox / spec.sat_res
    v = spec.sat_size / 2 - oy / spec.sat_res
    info = {"patch_center_m": [float(pcx), float(pcy)], "camera_m": [float(cam[0]), float(cam[1])]}
    info.update(meta or {})
    return Sample(sat, pano, float(u), float(v), theta, float(prior), spec.sat_res, info)


def _photometric(img: np.ndarray, nu: NuisanceSpec, rng: np.random.Generator) -> np.ndarray:
    gain = rng.uniform(*nu.gain, size=3)
    bias = rng.uniform(-nu.bias, nu.bias, size=3)
    out = img * gain + bias + rng.normal(0.0, nu.noise, size=img.shape)
    return np.clip(out, 0.0, 1.0)


def _render_with_gap(scene: Scene, spec: DatasetSpec, nu: NuisanceSpec, patch_center, cam, theta,
                     rng: np.random.Generator):
    from scipy.ndimage import gaussian_filter

    sat = render_satellite(scene, patch_center, spec.sat_size, spec.sat_res)
    if nu.sat_blur > 0:
        sat = gaussian_filter(sat, (nu.sat_blur, nu.sat_blur, 0), mode="nearest")
    sat = _photometric(sat, nu, rng)
    ground = scene.ground_view(nu.landmark_jitter)
    extra = []
    for _ in range(int(rng.integers(nu.transients[0], nu.transients[1] + 1))):
        r = rng.uniform(0.0, nu.transient_range)
        a = rng.uniform(0.0, 2 * math.pi)
        pos = (cam[0] + r * math.sin(a), cam[1] + r * math.cos(a))
        extra.append(Landmark(SQUARE, pos, float(rng.uniform(0.6, 1.2)),
                              tuple(float(v) for v in rng.random(3))))
    if extra:
        ground = Scene(ground.extent, ground.landmarks + extra, ground.ground_color, ground.sky_color)
    pano = render_panorama(ground, cam, theta, spec.camera_height, spec.pano_rows, spec.pano_cols)
    sky = np.all(pano == np.asarray(scene.sky_color), axis=2)
    pano = _photometric(pano, nu, rng)
    pano[sky] = scene.sky_color  # sky stays a constant colour
    return sat, pano


def _split_plan(seed: int, spec: DatasetSpec) -> dict[str, tuple[list[int], int]]:
    train_seeds, cross_seeds = scene_seeds(seed, spec)
    return {"train": (train_seeds, spec.n_train), "val": (train_seeds, spec.n_val),
            "test_same": (train_seeds, spec.n_test), "test_cross": (cross_seeds, spec.n_test)}


def iter_split(spec: DatasetSpec, seed: int, split: str, scenes: dict[int, Scene] | None = None):
    plan = _split_plan(seed, spec)
    if split not in plan:
        raise InvalidArgument(f"unknown split {split!r}")
    seeds, count = plan[split]
    scenes = {} if scenes is None else scenes
    split_id = SPLITS.index(split)
    for i in range(count):
        rng = np.random.default_rng([int(seed), split_id, i])
        s_seed = seeds[int(rng.integers(len(seeds)))]
        if s_seed not in scenes:
            scenes[s_seed] = generate_scene(spec.scene, s_seed)
        yield make_sample(scenes[s_seed], spec, rng, {"scene_seed": s_seed, "index": i})


def make_dataset(spec: DatasetSpec, seed: int, out_dir) -> Path:
    """Generate every split and write it under ``out_dir``."""
    out = Path(out_dir)
    train_seeds, cross_seeds = scene_seeds(seed, spec)
    try:
        out.mkdir(parents=True, exist_ok=True)
        scenes: dict[int, Scene] = {}
        counts = {}
        for split in SPLITS:
            d = out / split
            d.mkdir(exist_ok=True)
            n = 0
            for sample in iter_split(spec, seed, split, scenes):
                save_sample(d, n, sample)
                n += 1
            counts[split] = n
        manifest = {"format": "gdtn-dataset/1", "seed": int(seed), "spec": spec.to_json(),
                    "splits": list(SPLITS), "counts": counts,
                    "scene_seeds": {"train": train_seeds, "cross": cross_seeds}}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write dataset to {out}: {exc}") from exc
    return out


def save_sample(directory: Path, index: int, sample: Sample) -> None:
    stem = f"{index:06d}"
    write_tensor(directory / f"{stem}.sat.gdtn", sample.sat)
    write_tensor(directory / f"{stem}.pano.gdtn", sample.pano)
    (directory / f"{stem}.meta.json").write_text(json.dumps(sample.meta_json(), indent=2, sort_keys=True) + "\n")


def load_sample(directory, index: int) -> Sample:
    d = Path(directory)
    stem = f"{index:06d}"
    meta = json.loads((d / f"{stem}.meta.json").read_text())
    pose = meta.pop("gt_pose")
    prior = meta.pop("yaw_prior")
    res = meta.pop("res")
    meta.pop("units", None)
    return Sample(read_tensor(d / f"{stem}.sat.gdtn"), read_tensor(d / f"{stem}.pano.gdtn"),
                  pose["u"], pose["v"], pose["theta"], prior, res, meta)


@dataclass
class Split:
    """A whole split held in memory as stacked arrays."""

    name: str
    sat: np.ndarray  # (N, A, A, 3)
    pano: np.ndarray  # (N, H, W, 3)
    uv: np.ndarray  # (N, 2) satellite (u, v)
    theta: np.ndarray  # (N,)
    prior: np.ndarray  # (N,)
    res: float

    def __len__(self) -> int:
        return len(self.theta)

    def subset(self, idx) -> "Split":
        idx = np.asarray(idx)
        return Split(self.name, self.sat[idx], self.pano[idx], self.uv[idx], self.theta[idx],
                     self.prior[idx], self.res)


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise InvalidArgument(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def load_split(root, split: str, limit: int | None = None) -> Split:
    manifest = load_manifest(root)
    if split not in manifest["counts"]:
        raise InvalidArgument(f"dataset has no split {split!r}")
    n = manifest["counts"][split] if limit is None else min(limit, manifest["counts"][split])
    samples = [load_sample(Path(root) / split, i) for i in range(n)]
    if not samples:
        raise InvalidArgument(f"split {split!r} is empty")
    return Split(split, np.stack([s.sat for s in samples]), np.stack([s.pano for s in samples]),
                 np.array([[s.u, s.v] for s in samples]), np.array([s.theta for s in samples]),
                 np.array([s.yaw_prior for s in samples]), float(samples[0].res))
