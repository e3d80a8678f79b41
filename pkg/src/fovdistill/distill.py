"""Teacher-student self-distillation with field-of-view masked student inputs."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import InvalidArgument, NumericError, TrainingFailure
from .geometry import apply_mask, build_fov_mask, max_activation_mask, random_patch_mask
from .nets import (
    LocationModel,
    ground_features,
    load_checkpoint,
    localization_errors,
    location_forward,
    yaw_aligned,
)
from .numerics import ParamStore, Tensor

LOSS_KINDS = ("CE", "KLD")
TARGET_KINDS = ("sharpened", "single_mode", "unsharpened")
TEACHER_UPDATES = ("EMA", "Fixed", "PrevStudent")
MASK_KINDS = ("FoV", "RandomPatch", "MaxActivation")


@dataclass(frozen=True)
class DistillConfig:
    tau: float = 0.06
    alpha: float = 0.9
    fov_range: tuple[float, float] = (180.0, 240.0)
    loss_kind: str = "CE"
    target_kind: str = "sharpened"
    teacher_update: str = "EMA"
    mask_kind: str = "FoV"
    epochs: int = 10
    lr: float = 1e-4
    batch: int = 8
    seed: int = 0
    patch: int = 8
    patch_keep: float = 0.25
    drop_ratio: float = 0.25
    max_batches: int | None = None

    def validate(self) -> "DistillConfig":
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidArgument(f"loss_kind must be one of {LOSS_KINDS}")
        if self.target_kind not in TARGET_KINDS:
            raise InvalidArgument(f"target_kind must be one of {TARGET_KINDS}")
        if self.teacher_update not in TEACHER_UPDATES:
            raise InvalidArgument(f"teacher_update must be one of {TEACHER_UPDATES}")
        if self.mask_kind not in MASK_KINDS:
            raise InvalidArgument(f"mask_kind must be one of {MASK_KINDS}")
        if not self.tau > 0 or (self.target_kind == "sharpened" and self.tau > 1):
            raise InvalidArgument(f"tau must be in (0, 1] for sharpened targets, got {self.tau}")
        if not 0 <= self.alpha <= 1:
            raise InvalidArgument(f"alpha must be in [0, 1], got {self.alpha}")
        lo, hi = self.fov_range
        if not 0 < lo <= hi <= 360:
            raise InvalidArgument(f"fov_range must satisfy 0 < lo <= hi <= 360, got {self.fov_range}")
        if self.epochs < 0 or self.batch <= 0:
            raise InvalidArgument("epochs must be >= 0 and batch > 0")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DistillConfig":
        d = dict(d)
        if "fov_range" in d:
            d["fov_range"] = tuple(d["fov_range"])
        return cls(**d)


@dataclass
class DistillState:
    teacher: LocationModel
    student: LocationModel
    optimizer: nx.Adam
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0


def init_distill(teacher, cfg: DistillConfig) -> DistillState:
    """Student starts as an exact copy of the teacher."""
    cfg.validate()
    if isinstance(teacher, (str, Path)):
        teacher, manifest = load_checkpoint(teacher)
        if manifest["kind"] != "location":
            raise InvalidArgument("distillation needs a location checkpoint")
    if not isinstance(teacher, LocationModel):
        raise InvalidArgument("teacher must be a LocationModel or checkpoint path")
    teacher = teacher.copy()
    student = teacher.copy()
    return DistillState(teacher, student, nx.Adam(student.params, lr=cfg.lr),
                        np.random.default_rng(cfg.seed))


# ---------------------------------------------------------------------------
# student inputs


def pano_saliency(model: LocationModel, pano: np.ndarray) -> np.ndarray:
    """Ground-feature norm of ``model`` pulled back onto panorama pixels.

    Each below-horizon pixel takes the norm of the feature cell its ground
    point falls in; sky pixels and pixels outside the BEV footprint score 0.
    """
    cfg = model.cfg
    with nx.no_grad():
        feats = ground_features(model, pano[None]).data[0]
    norm = np.sqrt((feats * feats).sum(axis=0))
    fh, fw = norm.shape
    h, w = pano.shape[:2]
    pitch = 90.0 - 180.0 * np.arange(h) / h
    az = np.radians(360.0 * np.arange(w) / w - 180.0)
    sal = np.zeros((h, w))
    rows = np.flatnonzero(pitch < 0)
    d = cfg.camera_height / np.tan(np.radians(-pitch[rows]))
    x = d[:, None] * np.sin(az)[None, :]
    y = d[:, None] * np.cos(az)[None, :]
    px = cfg.bev_size / cfg.bev_extent
    j = x * px + cfg.bev_size / 2  # continuous BEV column
    i = cfg.bev_size / 2 - y * px
    scale = cfg.bev_size / fw
    fi = np.floor(i / scale).astype(int)
    fj = np.floor(j / scale).astype(int)
    ok = (fi >= 0) & (fi < fh) & (fj >= 0) & (fj < fw)
    vals = np.zeros(fi.shape)
    vals[ok] = norm[fi[ok], fj[ok]]
    sal[rows] = vals
    return sal


def make_student_input(pano: np.ndarray, cfg: DistillConfig, rng: np.random.Generator,
                       model: LocationModel | None = None) -> np.ndarray:
    """Masked copy of a yaw-compensated panorama."""
    cfg.validate()
    h, w = pano.shape[:2]
    if cfg.mask_kind == "FoV":
        fov = rng.uniform(*cfg.fov_range)
        center = rng.uniform(-180.0, 180.0)
        return apply_mask(pano, build_fov_mask(fov, center, w))
    if cfg.mask_kind == "RandomPatch":
        return apply_mask(pano, random_patch_mask(rng, h, w, cfg.patch, cfg.patch_keep))
    if model is None:
        raise InvalidArgument("MaxActivation masking needs the current student model")
    return apply_mask(pano, max_activation_mask(pano, pano_saliency(model, pano), cfg.drop_ratio))


# ---------------------------------------------------------------------------
# targets, losses, teacher updates


def distill_targets(h_t, h_s: Tensor, cfg: DistillConfig):
    """(P_t, P_s) for teacher/student heatmaps; P_t is a detached array.

    Leading axis is the batch when the maps are 3-D.
    """
    ht = h_t.data if isinstance(h_t, Tensor) else np.asarray(h_t, dtype=np.float64)
    if ht.shape != h_s.shape:
        raise InvalidArgument(f"heatmap shapes differ: {ht.shape} vs {h_s.shape}")
    batch = ht.ndim == 3
    if cfg.target_kind == "unsharpened":
        tau = 1.0
    else:
        tau = cfg.tau
    if cfg.target_kind == "single_mode":
        flat = ht.reshape(ht.shape[0], -1) if batch else ht.reshape(1, -1)
        p_t = np.zeros_like(flat)
        p_t[np.arange(flat.shape[0]), flat.argmax(axis=1)] = 1.0
        p_t = p_t.reshape(ht.shape)
    else:
        with nx.no_grad():
            p_t = nx.softmax_temp(Tensor(ht), tau, batch=batch).data
    p_s = nx.softmax_temp(h_s, tau, batch=batch)
    return p_t, p_s


def distill_loss(p_t, p_s: Tensor, cfg: DistillConfig) -> Tensor:
    """Mean over the batch of CE(P_t, P_s) or KL(P_t || P_s)."""
    batch = np.ndim(p_t) == 3
    fn = nx.cross_entropy if cfg.loss_kind == "CE" else nx.kl_divergence
    out = fn(p_t, p_s, batch=batch)
    return nx.mean(out) if batch else out


def ema_update(teacher: ParamStore, student: ParamStore, alpha: float) -> None:
    """In place: teacher <- alpha * teacher + (1 - alpha) * student."""
    if not 0 <= alpha <= 1:
        raise InvalidArgument(f"alpha must be in [0, 1], got {alpha}")
    teacher.check_compatible(student)
    for name, t in teacher.items():
        if alpha == 1:
            continue
        if alpha == 0:
            t.data = student[name].data.copy()
        else:
            t.data = alpha * t.data + (1 - alpha) * student[name].data
        t.grad = np.zeros_like(t.data)


def distill_step(state: DistillState, panos: np.ndarray, sats: np.ndarray, cfg: DistillConfig) -> float:
    """One optimizer step on the student followed by the per-step teacher update."""
    try:
        with nx.no_grad():
            h_t = location_forward(state.teacher, panos, sats)
        masked = np.stack([make_student_input(p, cfg, state.rng, state.student) for p in panos])
        state.student.params.zero_grad()
        h_s = location_forward(state.student, masked, sats)
        p_t, p_s = distill_targets(h_t, h_s, cfg)
        loss = distill_loss(p_t, p_s, cfg)
    except NumericError as exc:
        raise TrainingFailure(f"non-finite values at step {state.step}: {exc}", state) from exc
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingFailure(f"distillation loss is {value} at step {state.step}", state)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    if cfg.teacher_update == "EMA":
        ema_update(state.teacher.params, state.student.params, cfg.alpha)
    return value


def end_epoch(state: DistillState, cfg: DistillConfig) -> None:
    state.epoch += 1
    if cfg.teacher_update == "PrevStudent":
        state.teacher.params.assign(state.student.params)


def run_distillation(teacher, train, val, cfg: DistillConfig, log=None):
    """Full distillation run; returns (refined teacher, student, per-epoch log rows)."""
    state = init_distill(teacher, cfg)
    rows = []
    for epoch in range(cfg.epochs):
        perm = state.rng.permutation(len(train))
        n_batches = max(len(train) // cfg.batch, 1 if len(train) else 0)
        if cfg.max_batches is not None:
            n_batches = min(n_batches, cfg.max_batches)
        losses = []
        for b in range(n_batches):
            idx = perm[b * cfg.batch:(b + 1) * cfg.batch]
            losses.append(distill_step(state, yaw_aligned(train, idx), train.sat[idx], cfg))
        end_epoch(state, cfg)
        _, et = localization_errors(state.teacher, val)
        _, es = localization_errors(state.student, val)
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)) if losses else 0.0,
               "teacher_val_mean_m": float(et.mean()), "teacher_val_median_m": float(np.median(et)),
               "student_val_mean_m": float(es.mean()), "student_val_median_m": float(np.median(es))}
        rows.append(row)
        if log is not None:
            log(row)
    return state.teacher, state.student, rows


def write_log(rows, path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
