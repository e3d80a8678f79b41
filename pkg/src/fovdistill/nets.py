"""Heatmap location estimator and discrete-yaw orientation classifier."""
from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import InvalidArgument, NumericError, TrainingFailure
from .geometry import CAMERA_HEIGHT, rotate_panorama, spherical_to_bev
from .numerics import ParamStore, Tensor


@dataclass(frozen=True)
class LocationConfig:
    sat_size: int = 128
    pano_rows: int = 64
    pano_cols: int = 256
    bev_size: int = 64
    bev_extent: float = 35.0
    camera_height: float = CAMERA_HEIGHT
    channels: tuple[int, int, int] = (8, 16, 16)
    stride: int = 2
    ncc_eps: float = 1e-6

    @property
    def grid(self) -> int:
        return self.sat_size // self.stride


@dataclass(frozen=True)
class OrientationConfig:
    sat_size: int = 128
    pano_rows: int = 64
    pano_cols: int = 256
    bev_size: int = 64
    bev_extent: float = 35.0
    camera_height: float = CAMERA_HEIGHT
    channels: tuple[int, int, int] = (8, 16, 16)
    hidden: int = 64
    n_classes: int = 91


def _he(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def _add_encoder(store: ParamStore, prefix: str, channels, rng) -> None:
    cin = 3
    for i, cout in enumerate(channels):
        store.add(f"{prefix}.conv{i}.w", _he(rng, (cout, cin, 3, 3), cin * 9))
        store.add(f"{prefix}.conv{i}.b", np.zeros(cout))
        cin = cout


def encode(store: ParamStore, prefix: str, x: Tensor, strides, final_relu: bool = False) -> Tensor:
    n = len(strides)
    for i, s in enumerate(strides):
        x = nx.conv2d(x, store[f"{prefix}.conv{i}.w"], store[f"{prefix}.conv{i}.b"], stride=s, padding=1)
        if i < n - 1 or final_relu:
            x = nx.relu(x)
    return x


def to_bev_batch(panos: np.ndarray, cfg) -> np.ndarray:
    """(N, H, W, 3) panoramas -> (N, 3, S, S) centred BEV inputs."""
    panos = np.asarray(panos, dtype=np.float64)
    if panos.ndim == 3:
        panos = panos[None]
    if panos.shape[1:] != (cfg.pano_rows, cfg.pano_cols, 3):
        raise InvalidArgument(f"panorama shape {panos.shape[1:]} does not match model config")
    chw = Tensor(np.transpose(panos, (0, 3, 1, 2)))
    bev = spherical_to_bev(chw, cfg.camera_height, cfg.bev_extent, cfg.bev_size)
    return bev.data - 0.5


def sat_batch(sats: np.ndarray, cfg) -> np.ndarray:
    sats = np.asarray(sats, dtype=np.float64)
    if sats.ndim == 3:
        sats = sats[None]
    if sats.shape[1:] != (cfg.sat_size, cfg.sat_size, 3):
        raise InvalidArgument(f"satellite shape {sats.shape[1:]} does not match model config")
    return np.transpose(sats, (0, 3, 1, 2)) - 0.5


# ---------------------------------------------------------------------------
# location estimator


@dataclass
class LocationModel:
    cfg: LocationConfig
    params: ParamStore

    @classmethod
    def create(cls, cfg: LocationConfig = LocationConfig(), seed: int = 0) -> "LocationModel":
        rng = np.random.default_rng(seed)
        store = ParamStore()
        _add_encoder(store, "ground", cfg.channels, rng)
        _add_encoder(store, "sat", cfg.channels, rng)
        return cls(cfg, store)

    def copy(self) -> "LocationModel":
        return LocationModel(self.cfg, self.params.copy())


def normalized_xcorr(search: Tensor, template: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean, unit-norm cross-correlation of each template over its search map.

    search: (N, C, H, W); template: (N, C, h, w). Windows are centred on each
    output cell and zero-padded at the borders. Returns (N, H, W) in [-1, 1].
    """
    n = template.shape[0]
    count = float(np.prod(template.shape[1:]))
    t_mean = nx.mean(nx.reshape(template, (n, -1)), axis=1)
    t0 = template - nx.reshape(t_mean, (n, 1, 1, 1))
    t_norm = nx.sqrt(nx.sum(nx.reshape(t0 * t0, (n, -1)), axis=1) + eps)
    t_hat = t0 / nx.reshape(t_norm, (n, 1, 1, 1))
    h, w = template.shape[-2:]
    num = nx.correlate2d(search, t_hat)
    s1 = nx.box_sum(search, h, w)
    s2 = nx.box_sum(search * search, h, w)
    var = nx.relu(s2 - s1 * s1 * (1.0 / count))
    return num / nx.sqrt(var + eps)


def ground_features(m: LocationModel, panos) -> Tensor:
    return encode(m.params, "ground", Tensor(to_bev_batch(panos, m.cfg)), (1, m.cfg.stride, 1))


def location_forward(m: LocationModel, panos, sats) -> Tensor:
    """Heatmaps (N, G, G) of NCC scores for yaw-compensated panoramas against satellites."""
    g = ground_features(m, panos)
    s = encode(m.params, "sat", Tensor(sat_batch(sats, m.cfg)), (1, m.cfg.stride, 1))
    if g.shape[0] != s.shape[0]:
        raise InvalidArgument("panorama and satellite batch sizes differ")
    return normalized_xcorr(s, g, m.cfg.ncc_eps)


def cell_to_pixel(a, b, stride: int = 2):
    """Cell (row a, col b) -> satellite (u, v) pixel centre."""
    return stride * np.asarray(b) + stride / 2, stride * np.asarray(a) + stride / 2


def pixel_to_cell(u, v, stride: int = 2):
    """Satellite (u, v) -> containing cell (row, col)."""
    return (np.floor(np.asarray(v) / stride).astype(int), np.floor(np.asarray(u) / stride).astype(int))


def heatmap_argmax(h, stride: int = 2):
    """(u, v) pixel centre of the highest cell; ties go to the lowest row-major index.

    Accepts a single (G, G) map or a batch (N, G, G); returns arrays for batches.
    """
    d = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    if d.size == 0:
        raise InvalidArgument("empty heatmap")
    if not np.all(np.isfinite(d)):
        raise NumericError("non-finite heatmap scores")
    single = d.ndim == 2
    d2 = d.reshape(1 if single else d.shape[0], -1)
    flat = d2.argmax(axis=1)  # first occurrence wins
    a, b = np.divmod(flat, d.shape[-1])
    u, v = cell_to_pixel(a, b, stride)
    if single:
        return float(u[0]), float(v[0])
    return np.stack([u, v], axis=1).astype(float)


def gaussian_target(uv: np.ndarray, grid: int, stride: int = 2, sigma: float = 1.0) -> np.ndarray:
    """Gaussian location maps (N, G, G) centred on ground-truth pixels, sigma in cells."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    cells = np.arange(grid, dtype=np.float64)
    bc = (uv[:, 0] - stride / 2) / stride
    ac = (uv[:, 1] - stride / 2) / stride
    ga = np.exp(-((cells[None, :] - ac[:, None]) ** 2) / (2 * sigma * sigma))
    gb = np.exp(-((cells[None, :] - bc[:, None]) ** 2) / (2 * sigma * sigma))
    t = ga[:, :, None] * gb[:, None, :]
    return t / t.sum(axis=(1, 2), keepdims=True)


# ---------------------------------------------------------------------------
# orientation estimator


@dataclass
class OrientationModel:
    cfg: OrientationConfig
    params: ParamStore

    @classmethod
    def create(cls, cfg: OrientationConfig = OrientationConfig(), seed: int = 0) -> "OrientationModel":
        if cfg.n_classes % 2 == 0:
            raise InvalidArgument("n_classes must be odd so that offset 0 is a class")
        rng = np.random.default_rng(seed)
        store = ParamStore()
        _add_encoder(store, "bev", cfg.channels, rng)
        _add_encoder(store, "sat", cfg.channels, rng)
        c2 = 2 * cfg.channels[-1]
        store.add("mlp.w0", _he(rng, (c2, cfg.hidden), c2))
        store.add("mlp.b0", np.zeros(cfg.hidden))
        store.add("mlp.w1", rng.normal(0.0, 1.0 / math.sqrt(cfg.hidden), size=(cfg.hidden, cfg.n_classes)))
        store.add("mlp.b1", np.zeros(cfg.n_classes))
        return cls(cfg, store)

    @property
    def offsets(self) -> np.ndarray:
        half = (self.cfg.n_classes - 1) / 2
        return np.arange(self.cfg.n_classes) - half

    def copy(self) -> "OrientationModel":
        return OrientationModel(self.cfg, self.params.copy())


def orient_forward(m: OrientationModel, panos, sats, priors) -> Tensor:
    """Class logits (N, n_classes) for yaw offsets relative to ``priors``."""
    panos = np.asarray(panos, dtype=np.float64)
    if panos.ndim == 3:
        panos = panos[None]
    priors = np.atleast_1d(np.asarray(priors, dtype=np.float64))
    if priors.shape[0] != panos.shape[0]:
        raise InvalidArgument("one prior per panorama required")
    aligned = np.stack([rotate_panorama(p, -pr) for p, pr in zip(panos, priors)])
    p = m.params
    fg = encode(p, "bev", Tensor(to_bev_batch(aligned, m.cfg)), (1, 2, 1), final_relu=True)
    fs = encode(p, "sat", Tensor(sat_batch(sats, m.cfg)), (2, 2, 1), final_relu=True)
    if fg.shape != fs.shape:
        raise InvalidArgument(f"feature maps differ in shape: {fg.shape} vs {fs.shape}")
    fused = nx.spatial_mean(nx.concat([fs, fg], axis=1))
    hidden = nx.relu(fused @ p["mlp.w0"] + p["mlp.b0"])
    return hidden @ p["mlp.w1"] + p["mlp.b1"]


def predict_yaw(m: OrientationModel, logits: Tensor, priors) -> np.ndarray:
    cls = np.argmax(logits.data, axis=-1)
    return np.asarray(priors, dtype=np.float64) + m.offsets[cls]


def smooth_labels(true_offset, n_classes: int = 91, sigma: float = 2.0) -> np.ndarray:
    """Gaussian-smoothed class distribution around ``true_offset`` degrees."""
    offs = np.atleast_1d(np.asarray(true_offset, dtype=np.float64))
    half = (n_classes - 1) / 2
    if np.any(np.abs(offs) > half):
        raise InvalidArgument(f"offset outside +-{half} degrees")
    centers = np.arange(n_classes) - half
    logw = -((centers[None, :] - offs[:, None]) ** 2) / (2 * sigma * sigma)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    out = w / w.sum(axis=1, keepdims=True)
    return out[0] if np.ndim(true_offset) == 0 else out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, directory, training: dict | None = None, metrics: dict | None = None,
                    extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    kind = "location" if isinstance(model, LocationModel) else "orientation"
    model.params.save(d)
    manifest = {"kind": kind, "architecture": asdict(model.cfg), "training": training or {},
                "metrics": metrics or {}}
    if extra:
        manifest.update(extra)
    (d / "checkpoint.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory):
    d = Path(directory)
    try:
        manifest = json.loads((d / "checkpoint.json").read_text())
        arch = dict(manifest["architecture"])
        arch["channels"] = tuple(arch["channels"])
        if manifest["kind"] == "location":
            cfg = LocationConfig(**arch)
            ref = LocationModel.create(cfg)
        elif manifest["kind"] == "orientation":
            cfg = OrientationConfig(**arch)
            ref = OrientationModel.create(cfg)
        else:
            raise InvalidArgument(f"unknown checkpoint kind {manifest['kind']!r}")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, InvalidArgument):
            raise
        raise InvalidArgument(f"unreadable checkpoint at {d}: {exc}") from exc
    params = ParamStore.load(d)
    ref.params.check_compatible(params)
    model = type(ref)(cfg, params)
    return model, manifest


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-4
    batch: int = 8
    seed: int = 0
    tau: float = 1.0  # location pretraining temperature
    sigma: float = 1.0  # location target width (cells) / orientation label width (deg)
    augment_fov: tuple[float, float] | None = None  # FoV masking as plain augmentation
    max_batches: int | None = None  # cap per epoch (for quick runs)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("augment_fov") is not None:
            d["augment_fov"] = tuple(d["augment_fov"])
        return cls(**d)


def yaw_aligned(split, idx, yaws=None) -> np.ndarray:
    """Panoramas rotated so that column azimuth equals world azimuth."""
    yaws = split.theta if yaws is None else yaws
    return np.stack([rotate_panorama(split.pano[i], -yaws[i]) for i in idx])


def localization_errors(m: LocationModel, split, batch: int = 16, yaws=None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted (u, v) and metric error for every sample of ``split``."""
    preds = []
    with nx.no_grad():
        for i in range(0, len(split), batch):
            idx = np.arange(i, min(i + batch, len(split)))
            h = location_forward(m, yaw_aligned(split, idx, yaws), split.sat[idx])
            preds.append(heatmap_argmax(h, m.cfg.stride))
    uv = np.concatenate(preds)
    return uv, np.hypot(*(uv - split.uv).T) * split.res


def _batches(n: int, batch: int, rng: np.random.Generator, max_batches=None):
    perm = rng.permutation(n)
    count = max(n // batch, 1 if n else 0)  # a split smaller than one batch still trains
    if max_batches is not None:
        count = min(count, max_batches)
    for b in range(count):
        yield perm[b * batch:(b + 1) * batch]


def _check_loss(value: float, what: str, state=None) -> None:
    if not math.isfinite(value):
        raise TrainingFailure(f"{what} diverged (loss {value})", state)


@contextmanager
def _diverges(what: str, state):
    try:
        yield
    except NumericError as exc:
        raise TrainingFailure(f"{what} diverged: {exc}", state) from exc


def pretrain_location(m: LocationModel, train, val, cfg: TrainConfig = TrainConfig(), log=None):
    """Supervised teacher pretraining against Gaussian location maps.

    Returns the parameters with the best validation mean error together with
    the per-epoch history.
    """
    from .geometry import apply_mask, build_fov_mask

    rng = np.random.default_rng(cfg.seed)
    mask_rng = np.random.default_rng([cfg.seed, 1])  # separate stream: augmentation leaves batch order unchanged
    opt = nx.Adam(m.params, lr=cfg.lr)
    best = (math.inf, m.params.copy())
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(train), cfg.batch, rng, cfg.max_batches):
            panos = yaw_aligned(train, idx)
            if cfg.augment_fov is not None:
                w = panos.shape[2]
                panos = np.stack([apply_mask(p, build_fov_mask(mask_rng.uniform(*cfg.augment_fov),
                                                               mask_rng.uniform(-180, 180), w)) for p in panos])
            m.params.zero_grad()
            target = gaussian_target(train.uv[idx], m.cfg.grid, m.cfg.stride, cfg.sigma)
            with _diverges("location pretraining", m):
                h = location_forward(m, panos, train.sat[idx])
                loss = nx.mean(nx.cross_entropy(target, nx.softmax_temp(h, cfg.tau, batch=True), batch=True))
            _check_loss(loss.item(), "location pretraining")
            loss.backward()
            opt.step()
            losses.append(loss.item())
        _, err = localization_errors(m, val)
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)) if losses else 0.0,
               "val_mean_m": float(err.mean()), "val_median_m": float(np.median(err))}
        history.append(row)
        if log is not None:
            log(row)
        if row["val_mean_m"] < best[0]:
            best = (row["val_mean_m"], m.params.copy())
    if cfg.epochs > 0:
        m.params.assign(best[1])
    return m, history


def yaw_errors(pred, gt) -> np.ndarray:
    """Wrapped absolute yaw difference in [0, 180]."""
    d = np.abs((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) % 360.0)
    return np.minimum(d, 360.0 - d)


def orientation_predictions(m: OrientationModel, split, priors=None, batch: int = 32) -> np.ndarray:
    priors = split.prior if priors is None else priors
    out = []
    with nx.no_grad():
        for i in range(0, len(split), batch):
            idx = np.arange(i, min(i + batch, len(split)))
            logits = orient_forward(m, split.pano[idx], split.sat[idx], priors[idx])
            out.append(predict_yaw(m, logits, priors[idx]))
    return np.concatenate(out)


def train_orientation(m: OrientationModel, train, val, cfg: TrainConfig = TrainConfig(sigma=2.0),
                      prior_noise: float = 45.0, log=None):
    """Cross-entropy against smoothed offset labels.

    Training priors are redrawn every epoch within +-``prior_noise``; the
    stored dataset priors are used for validation.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = nx.Adam(m.params, lr=cfg.lr)
    half = (m.cfg.n_classes - 1) / 2
    noise = min(prior_noise, half)
    best = (math.inf, m.params.copy())
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(train), cfg.batch, rng, cfg.max_batches):
            offs = rng.uniform(-noise, noise, size=len(idx))
            priors = train.theta[idx] - offs
            m.params.zero_grad()
            with _diverges("orientation training", m):
                logits = orient_forward(m, train.pano[idx], train.sat[idx], priors)
                probs = nx.softmax_temp(logits, 1.0, batch=True)
                loss = nx.mean(nx.cross_entropy(smooth_labels(offs, m.cfg.n_classes, cfg.sigma), probs,
                                                batch=True))
            _check_loss(loss.item(), "orientation training")
            loss.backward()
            opt.step()
            losses.append(loss.item())
        err = yaw_errors(orientation_predictions(m, val), val.theta)
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)) if losses else 0.0,
               "val_mean_deg": float(err.mean()), "val_median_deg": float(np.median(err))}
        history.append(row)
        if log is not None:
            log(row)
        if row["val_median_deg"] < best[0]:
            best = (row["val_median_deg"], m.params.copy())
    if cfg.epochs > 0:
        m.params.assign(best[1])
    return m, history
