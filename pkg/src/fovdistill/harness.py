"""Evaluation, the two-stage 3-DoF pipeline, ablation suites and the command line."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .distill import DistillConfig, run_distillation, write_log
from .errors import GenerationFailure, InvalidArgument, NumericError, TrainingFailure
from .nets import (
    LocationModel,
    OrientationModel,
    TrainConfig,
    load_checkpoint,
    localization_errors,
    location_forward,
    orientation_predictions,
    pretrain_location,
    save_checkpoint,
    train_orientation,
    yaw_aligned,
    yaw_errors,
)
from .numerics import read_tensor, softmax_temp
from .synthworld import SPLITS, DatasetSpec, Split, load_manifest, load_split, make_dataset

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INVALID = 4


def lower_median(values) -> float:
    """Median that picks the lower middle element for even counts."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return 0.0
    return float(v[(v.size - 1) // 2])


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    split: str
    records: list[dict]
    mean_m: float
    median_m: float
    mean_deg: float
    median_deg: float

    @classmethod
    def from_predictions(cls, split: Split, pred_uv, pred_yaw=None) -> "EvalReport":
        pred_uv = np.asarray(pred_uv, dtype=np.float64).reshape(len(split), 2)
        pred_yaw = split.theta if pred_yaw is None else np.asarray(pred_yaw, dtype=np.float64)
        err_m = np.hypot(*(pred_uv - split.uv).T) * split.res
        err_deg = yaw_errors(pred_yaw, split.theta)
        records = [
            {"index": i, "u": float(split.uv[i, 0]), "v": float(split.uv[i, 1]), "theta": float(split.theta[i]),
             "pred_u": float(pred_uv[i, 0]), "pred_v": float(pred_uv[i, 1]), "pred_theta": float(pred_yaw[i]),
             "error_m": float(err_m[i]), "error_deg": float(err_deg[i])}
            for i in range(len(split))
        ]
        return cls.from_records(split.name, records)

    @classmethod
    def from_records(cls, split: str, records: list[dict]) -> "EvalReport":
        em = [r["error_m"] for r in records]
        ed = [r["error_deg"] for r in records]
        mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
        return cls(split, records, mean(em), lower_median(em), mean(ed), lower_median(ed))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def summary(self) -> dict:
        return {"split": self.split, "n": len(self.records), "mean_m": self.mean_m, "median_m": self.median_m,
                "mean_deg": self.mean_deg, "median_deg": self.median_deg}


def _as_model(obj, kind):
    if isinstance(obj, (str, Path)):
        model, manifest = load_checkpoint(obj)
        if manifest["kind"] != kind:
            raise InvalidArgument(f"expected a {kind} checkpoint, got {manifest['kind']}")
        return model
    return obj


def _check_shapes(cfg, split: Split) -> None:
    if split.sat.shape[1:] != (cfg.sat_size, cfg.sat_size, 3) or \
            split.pano.shape[1:] != (cfg.pano_rows, cfg.pano_cols, 3):
        raise InvalidArgument("checkpoint is not compatible with the dataset image shapes")


def predict_locations(loc, split: Split, yaws=None) -> np.ndarray:
    """Predicted (u, v) per sample. ``loc`` is a LocationModel or has ``predict_uv(split, yaws)``."""
    if hasattr(loc, "predict_uv"):
        return np.asarray(loc.predict_uv(split, yaws), dtype=np.float64)
    _check_shapes(loc.cfg, split)
    uv, _ = localization_errors(loc, split, yaws=yaws)
    return uv


def predict_orientations(orient, split: Split) -> np.ndarray:
    if hasattr(orient, "predict_yaw"):
        return np.asarray(orient.predict_yaw(split), dtype=np.float64)
    _check_shapes(orient.cfg, split)
    return orientation_predictions(orient, split)


def eval_localization(loc, split: Split) -> EvalReport:
    """Location-only evaluation with panoramas aligned by the ground-truth yaw."""
    loc = _as_model(loc, "location")
    return EvalReport.from_predictions(split, predict_locations(loc, split))


def eval_3dof(orient, loc, split: Split) -> EvalReport:
    """Orientation from the prior, then location on panoramas aligned by the predicted yaw."""
    orient = _as_model(orient, "orientation")
    loc = _as_model(loc, "location")
    yaws = predict_orientations(orient, split)
    return EvalReport.from_predictions(split, predict_locations(loc, split, yaws), yaws)


# ---------------------------------------------------------------------------
# experiment configuration


STAGES = ("gen", "pretrain", "train-orient", "distill", "eval", "ablate")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    stage: str = "distill"
    dataset_spec: DatasetSpec = DatasetSpec()
    pretrain: TrainConfig = TrainConfig()
    orient: TrainConfig = TrainConfig(sigma=2.0)
    distill: DistillConfig = DistillConfig()
    seeds: tuple[int, ...] = (0, 1, 2)
    out: str = "out"

    def validate(self, check_paths: bool = False) -> "ExperimentConfig":
        if self.stage not in STAGES:
            raise InvalidArgument(f"stage must be one of {STAGES}")
        if not self.seeds:
            raise InvalidArgument("seed list must not be empty")
        if check_paths and self.stage != "gen" and not Path(self.dataset).exists():
            raise InvalidArgument(f"dataset {self.dataset} does not exist")
        self.distill.validate()
        return self

    def to_json(self) -> dict:
        return {"dataset": self.dataset, "stage": self.stage, "dataset_spec": self.dataset_spec.to_json(),
                "pretrain": self.pretrain.to_json(), "orient": self.orient.to_json(),
                "distill": self.distill.to_json(), "seeds": list(self.seeds), "out": self.out}

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {}
        if "dataset_spec" in d:
            kw["dataset_spec"] = DatasetSpec.from_json(d.pop("dataset_spec"))
        for key in ("pretrain", "orient"):
            if key in d:
                kw[key] = TrainConfig.from_json(d.pop(key))
        if "distill" in d:
            kw["distill"] = DistillConfig.from_json(d.pop("distill"))
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d.pop("seeds"))
        try:
            return cls(**d, **kw)
        except TypeError as exc:
            raise InvalidArgument(f"bad experiment config: {exc}") from exc


def benchmark_config(dataset: str = "bench", out: str = "out") -> ExperimentConfig:
    """Reduced-size benchmark used by the acceptance suite.

    A smaller dataset with a shorter, faster-learning pretraining schedule.
    Distillation gets the largest epoch count for which three seeds finish
    within ten minutes on one core; validation error was still falling there.
    """
    return ExperimentConfig(
        dataset=dataset,
        stage="ablate",
        dataset_spec=DatasetSpec(n_train=400, n_val=96, n_test=192),
        pretrain=TrainConfig(epochs=3, lr=1e-3),
        orient=TrainConfig(epochs=4, lr=1e-3, sigma=2.0),
        distill=DistillConfig(epochs=5),
        out=out,
    )


# ---------------------------------------------------------------------------
# ablations


SUITES = {
    "mask_kind": [("FoV", {"mask_kind": "FoV"}), ("RandomPatch", {"mask_kind": "RandomPatch"}),
                  ("MaxActivation", {"mask_kind": "MaxActivation"})],
    "target_kind": [("sharpened", {"target_kind": "sharpened"}), ("single_mode", {"target_kind": "single_mode"}),
                    ("unsharpened", {"target_kind": "unsharpened"})],
    "fov": [(f"fov{f}", {"fov_range": (float(f), float(f))}) for f in range(60, 331, 30)],
    "teacher_update": [("EMA", {"teacher_update": "EMA"}), ("Fixed", {"teacher_update": "Fixed"}),
                       ("PrevStudent", {"teacher_update": "PrevStudent"})],
    "loss_kind": [("CE", {"loss_kind": "CE"}), ("KLD", {"loss_kind": "KLD"})],
    # supervised-only rows retrain from scratch; each seed pairs a plain and an augmented run
    "augmentation": [("distilled", {}), ("supervised", "plain"), ("augmentation", "augment")],
}


def _spread(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"min": float(v.min()), "median": lower_median(v), "max": float(v.max())}


def _cfg_key(cfg) -> str:
    return json.dumps(cfg.to_json(), sort_keys=True)


def _eval_pair(model, data: dict) -> dict:
    out = {}
    for split in ("test_same", "test_cross"):
        r = eval_localization(model, data[split])
        out[split] = {"mean_m": r.mean_m, "median_m": r.median_m}
    return out


def run_variant(teacher: LocationModel, data: dict, cfg: DistillConfig, cache: dict | None = None) -> dict:
    """Distil from ``teacher`` with ``cfg`` and evaluate the refined teacher on both test splits."""
    key = "distill:" + _cfg_key(cfg)
    if cache is not None and key in cache:
        return cache[key]
    refined, _, rows = run_distillation(teacher, data["train"], data["val"], cfg)
    result = _eval_pair(refined, data)
    result["log"] = rows
    if cache is not None:
        cache[key] = result
    return result


def run_supervised(data: dict, arch, pretrain: TrainConfig, seed: int, augment_fov=None,
                   cache: dict | None = None) -> dict:
    """Supervised training from scratch, optionally with FoV masking as plain augmentation.

    Runs with and without augmentation at the same seed share the initial
    weights and the batch order, so they differ only in the masking.
    """
    fov = None if augment_fov is None else tuple(float(f) for f in augment_fov)
    cfg = replace(pretrain, seed=seed, augment_fov=fov)
    key = f"supervised:{json.dumps(asdict(arch), sort_keys=True)}:{_cfg_key(cfg)}"
    if cache is not None and key in cache:
        return cache[key]
    model, rows = pretrain_location(LocationModel.create(arch, seed), data["train"], data["val"], cfg)
    result = _eval_pair(model, data)
    result["log"] = rows
    if cache is not None:
        cache[key] = result
    return result


def run_augmentation(data: dict, arch, pretrain: TrainConfig, fov_range, seed: int,
                     cache: dict | None = None) -> dict:
    """Supervised training from scratch with FoV masking used as plain augmentation."""
    return run_supervised(data, arch, pretrain, seed, fov_range, cache)


def run_ablation(suite: str, teacher, data: dict, base: DistillConfig = DistillConfig(), seeds=(0, 1, 2),
                 pretrain: TrainConfig | None = None, cache: dict | None = None) -> dict:
    """Comparison table for one ablation suite; every variant starts from the same teacher."""
    if suite not in SUITES:
        raise InvalidArgument(f"unknown ablation suite {suite!r}; choose from {sorted(SUITES)}")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise InvalidArgument("seed list must not be empty")
    teacher = _as_model(teacher, "location")
    base.validate()
    if suite == "augmentation" and pretrain is None:
        raise InvalidArgument("the augmentation suite needs the teacher's pretraining config")

    base_eval = _eval_pair(teacher, data)
    rows = [_row("baseline", [base_eval] * len(seeds), seeds)]
    for name, overrides in SUITES[suite]:
        results = []
        for s in seeds:
            if isinstance(overrides, str):
                fov = base.fov_range if overrides == "augment" else None
                results.append(run_supervised(data, teacher.cfg, pretrain, s, fov, cache))
            else:
                results.append(run_variant(teacher, data, replace(base, seed=s, **overrides), cache))
        rows.append(_row(name, results, seeds))
    return {"suite": suite, "seeds": list(seeds), "base": base.to_json(), "rows": rows}


def _row(name: str, results: list[dict], seeds) -> dict:
    row = {"variant": name}
    for split in ("test_same", "test_cross"):
        for stat in ("mean_m", "median_m"):
            per_seed = [r[split][stat] for r in results]
            row[f"{split}.{stat}"] = {"per_seed": per_seed, **_spread(per_seed)}
    return row


def format_table(table: dict) -> str:
    """Aligned plain-text rendering: median [min, max] across seeds."""
    cols = [f"{s}.{m}" for s in ("test_same", "test_cross") for m in ("mean_m", "median_m")]
    header = ["variant"] + cols
    body = []
    for row in table["rows"]:
        cells = [row["variant"]]
        for c in cols:
            v = row[c]
            cells.append(f"{v['median']:.3f} [{v['min']:.3f}, {v['max']:.3f}]")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    lines = [f"suite: {table['suite']}  seeds: {table['seeds']}", fmt(header)]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def write_table(table: dict, out_dir) -> Path:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{table['suite']}.json").write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")
    (d / f"{table['suite']}.txt").write_text(format_table(table))
    return d


# ---------------------------------------------------------------------------
# exports


def _gray(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] in (1, 3):
        a = a.mean(axis=-1)
    if a.ndim != 2:
        raise InvalidArgument(f"PGM export needs a 2-D tensor or an image, got shape {a.shape}")
    return a


def to_pgm(arr: np.ndarray) -> bytes:
    """Binary PGM, values scaled per image to [0, 255]."""
    a = _gray(arr)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo)
    pix = np.rint(scaled * 255).astype(np.uint8)
    return f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode() + pix.tobytes()


def to_csv(arr: np.ndarray) -> str:
    a = np.asarray(arr, dtype=np.float64)
    a = a.reshape(1, -1) if a.ndim <= 1 else a.reshape(-1, a.shape[-1])
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in a)


def export_tensor(arr: np.ndarray, path) -> Path:
    path = Path(path)
    if path.suffix == ".pgm":
        path.write_bytes(to_pgm(arr))
    elif path.suffix == ".csv":
        path.write_text(to_csv(arr))
    else:
        raise InvalidArgument(f"unsupported export format {path.suffix!r}; use .pgm or .csv")
    return path


def export_heatmaps(model: LocationModel, split: Split, out_dir, limit: int, tau: float) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    idx = np.arange(min(limit, len(split)))
    with nx.no_grad():
        h = location_forward(model, yaw_aligned(split, idx), split.sat[idx])
        p = softmax_temp(h, tau, batch=True)
    for k, i in enumerate(idx):
        (d / f"{i:06d}.heat.pgm").write_bytes(to_pgm(h.data[k]))
        (d / f"{i:06d}.prob.pgm").write_bytes(to_pgm(p.data[k]))
        (d / f"{i:06d}.prob.csv").write_text(to_csv(p.data[k]))


# ---------------------------------------------------------------------------
# command line


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: usage error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_data(root, splits=SPLITS) -> dict:
    load_manifest(root)
    return {s: load_split(root, s) for s in splits}


def _write_json_atomic(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"config {path} is not valid JSON: {exc}") from exc


def _distill_cfg(args) -> DistillConfig:
    raw = _read_config(args.config)
    cfg = DistillConfig.from_json(raw.get("distill", raw))
    over = {}
    if args.tau is not None:
        over["tau"] = args.tau
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if args.fov_lo is not None or args.fov_hi is not None:
        lo = cfg.fov_range[0] if args.fov_lo is None else args.fov_lo
        hi = cfg.fov_range[1] if args.fov_hi is None else args.fov_hi
        over["fov_range"] = (lo, hi)
    if args.loss is not None:
        over["loss_kind"] = {"ce": "CE", "kld": "KLD"}[args.loss]
    if args.teacher_update is not None:
        over["teacher_update"] = {"ema": "EMA", "fixed": "Fixed", "prev": "PrevStudent"}[args.teacher_update]
    if args.mask is not None:
        over["mask_kind"] = {"fov": "FoV", "patch": "RandomPatch", "maxact": "MaxActivation"}[args.mask]
    if args.seed is not None:
        over["seed"] = args.seed
    if args.epochs is not None:
        over["epochs"] = args.epochs
    return replace(cfg, **over).validate()


def _train_cfg(args, default: TrainConfig) -> TrainConfig:
    raw = _read_config(args.config)
    cfg = TrainConfig.from_json(raw) if raw else default
    over = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs), ("lr", args.lr)) if v is not None}
    return replace(cfg, **over)


def _cmd_gen(args) -> int:
    raw = _read_config(args.config)
    if raw:
        spec = DatasetSpec.from_json(raw.get("dataset_spec", raw))
    elif args.preset == "benchmark":
        spec = benchmark_config().dataset_spec
    else:
        spec = DatasetSpec()
    make_dataset(spec, args.seed if args.seed is not None else 0, args.out)
    print(f"wrote dataset to {args.out}")
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    cfg = _train_cfg(args, TrainConfig())
    data = _load_data(args.data, ("train", "val"))
    model, hist = pretrain_location(LocationModel.create(seed=cfg.seed), data["train"], data["val"], cfg,
                                    log=lambda r: print(json.dumps(r, sort_keys=True)))
    save_checkpoint(model, args.out, training=cfg.to_json(), metrics={"history": hist})
    return EXIT_OK


def _cmd_train_orient(args) -> int:
    cfg = _train_cfg(args, TrainConfig(sigma=2.0))
    data = _load_data(args.data, ("train", "val"))
    prior_noise = load_manifest(args.data)["spec"]["prior_noise"]
    model, hist = train_orientation(OrientationModel.create(seed=cfg.seed), data["train"], data["val"], cfg,
                                    prior_noise, log=lambda r: print(json.dumps(r, sort_keys=True)))
    save_checkpoint(model, args.out, training=cfg.to_json(), metrics={"history": hist})
    return EXIT_OK


def _cmd_distill(args) -> int:
    cfg = _distill_cfg(args)
    teacher = _as_model(args.teacher, "location")
    data = _load_data(args.data, ("train", "val"))
    refined, student, rows = run_distillation(teacher, data["train"], data["val"], cfg,
                                              log=lambda r: print(json.dumps(r, sort_keys=True)))
    out = Path(args.out)
    save_checkpoint(refined, out / "teacher", training={"distill": cfg.to_json()})
    save_checkpoint(student, out / "student", training={"distill": cfg.to_json()})
    write_log(rows, out / "log.jsonl")
    return EXIT_OK


def _cmd_eval(args) -> int:
    loc = _as_model(args.loc, "location")
    orient = _as_model(args.orient, "orientation") if args.orient else None
    data = _load_data(args.data, (args.split,))
    split = data[args.split]
    report = eval_3dof(orient, loc, split) if orient is not None else eval_localization(loc, split)
    if args.export_dir:
        export_heatmaps(loc, split, args.export_dir, args.export_limit, args.tau if args.tau else 0.06)
    _write_json_atomic(args.out, report.to_json())
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _distill_cfg(args)
    raw = _read_config(args.config)
    pretrain = TrainConfig.from_json(raw["pretrain"]) if "pretrain" in raw else benchmark_config().pretrain
    data = _load_data(args.data)
    cache: dict = {}
    for suite in args.suite:
        table = run_ablation(suite, args.teacher, data, cfg, args.seeds, pretrain, cache)
        write_table(table, args.out)
        print(format_table(table), end="")
    return EXIT_OK


def _cmd_export(args) -> int:
    export_tensor(read_tensor(args.input), args.out)
    return EXIT_OK


def _distill_flags(p) -> None:
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--fov-lo", type=float)
    p.add_argument("--fov-hi", type=float)
    p.add_argument("--loss", choices=("ce", "kld"))
    p.add_argument("--teacher-update", choices=("ema", "fixed", "prev"))
    p.add_argument("--mask", choices=("fov", "patch", "maxact"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fovdistill", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--preset", choices=("default", "benchmark"), default="default")
    p.set_defaults(func=_cmd_gen)

    for name, func, desc in (("pretrain", _cmd_pretrain, "supervised location pretraining"),
                             ("train-orient", _cmd_train_orient, "train the orientation classifier")):
        p = sub.add_parser(name, help=desc)
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--lr", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("distill", help="refine a pretrained location checkpoint")
    common(p)
    _distill_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("eval", help="evaluate checkpoints on one split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--loc", required=True)
    p.add_argument("--orient")
    p.add_argument("--split", choices=SPLITS, default="test_cross")
    p.add_argument("--tau", type=float)
    p.add_argument("--export-dir")
    p.add_argument("--export-limit", type=int, default=8)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run ablation suites")
    common(p)
    _distill_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--suite", nargs="+", choices=sorted(SUITES), required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export", help="dump a GDTN tensor as PGM or CSV")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"fovdistill: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidArgument, GenerationFailure, NumericError) as exc:
        print(f"fovdistill: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingFailure as exc:
        print(f"fovdistill: training failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
