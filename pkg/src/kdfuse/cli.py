"""Batch front door: config parsing, synthetic-bundle generation, and the
stage pipeline (fuse -> train -> diagnose -> attack -> corrupt-eval -> report).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cache_io, diagnostics
from .cache_io import CacheTensor
from .diagnostics import (
    CORRUPTION_KINDS,
    QUADRANTS,
    ensemble_stats,
    fgsm_attack,
    interclass_correlation,
    pgd_attack,
    quadrant_counts,
    quadrant_delta,
    corrupt,
)
from .errors import ConfigError, KdfuseError, StageError
from .fusion import (
    FeatureProjection,
    FusionConfig,
    average_prompt_logits,
    fuse_features,
    fuse_logits,
    project_features,
)
from .student import (
    TrainConfig,
    evaluate,
    load_student,
    save_student,
    split_train_val,
    train,
)
from .synth import SynthSpec, gen_synth

STAGES = ("fuse", "train", "diagnose", "attack", "corrupt-eval", "report")

DEFAULT_ATTACK_EPS = (0.001, 0.005, 0.01)
DEFAULT_SEVERITIES = (1, 2, 3, 4, 5)


@dataclass
class RunConfig:
    bundle: Path
    out: Path
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    train: TrainConfig = field(default_factory=TrainConfig)
    diag: dict = field(default_factory=lambda: {
        "quadrants": True, "correlation": True, "ensemble": True,
    })
    report_formats: list[str] = field(default_factory=lambda: ["csv", "json"])
    attack_eps: tuple = DEFAULT_ATTACK_EPS
    pgd_iters: int = 10
    pgd_step_div: float = 4.0
    severities: tuple = DEFAULT_SEVERITIES

    @property
    def fusion(self) -> FusionConfig:
        return self.train.fusion


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _parse_bool(key, value):
    try:
        return _BOOL[value.lower()]
    except KeyError:
        raise ConfigError(f"key '{key}': expected a boolean, got {value!r}") from None


def _parse_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"key '{key}': expected a number, got {value!r}") from None


def _parse_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"key '{key}': expected an integer, got {value!r}") from None


def parse_run_config(path) -> RunConfig:
    """Parse the flat key-value run configuration; unknown keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        pairs = cache_io.parse_kv(path.read_text(encoding="utf-8"))
    except KdfuseError as e:
        raise ConfigError(str(e)) from None
    if "bundle" not in pairs:
        raise ConfigError("key 'bundle': missing (required)")
    if "out" not in pairs:
        raise ConfigError("key 'out': missing (required)")
    cfg = RunConfig(bundle=Path(pairs.pop("bundle")), out=Path(pairs.pop("out")))
    tc, fc = cfg.train, cfg.train.fusion
    for key, value in pairs.items():
        if key == "stages":
            stages = [s.strip() for s in value.split(",") if s.strip()]
            for s in stages:
                if s not in STAGES:
                    raise ConfigError(f"key 'stages': unknown stage '{s}'")
            cfg.stages = stages
        elif key == "seed":
            tc.seed = _parse_int(key, value)
        elif key == "precision":
            tc.precision = _parse_int(key, value)
        elif key == "fusion.alpha":
            fc.alpha = _parse_float(key, value)
        elif key == "fusion.lambda":
            fc.lam = _parse_float(key, value)
        elif key == "fusion.beta":
            fc.beta = _parse_float(key, value)
        elif key == "fusion.gamma":
            fc.gamma = _parse_float(key, value)
        elif key == "fusion.t_temp":
            fc.t_temp = _parse_float(key, value)
        elif key == "fusion.certainty_threshold":
            fc.certainty_threshold = _parse_float(key, value)
        elif key == "fusion.logit_norm":
            fc.logit_norm = value
        elif key == "train.epochs":
            tc.epochs = _parse_int(key, value)
        elif key == "train.batch_size":
            tc.batch_size = _parse_int(key, value)
        elif key == "train.learning_rate":
            tc.learning_rate = _parse_float(key, value)
        elif key == "train.momentum":
            tc.momentum = _parse_float(key, value)
        elif key == "train.weight_decay":
            tc.weight_decay = _parse_float(key, value)
        elif key == "train.lr_decay_factor":
            tc.lr_decay_factor = _parse_float(key, value)
        elif key == "train.lr_decay_epochs":
            tc.lr_decay_epochs = [_parse_int(key, v) for v in value.split(",")]
        elif key == "train.hidden_sizes":
            tc.hidden_sizes = [_parse_int(key, v) for v in value.split(",")]
        elif key == "train.val_fraction":
            tc.val_fraction = _parse_float(key, value)
        elif key.startswith("diag."):
            name = key[5:]
            if name not in ("quadrants", "correlation", "ensemble"):
                raise ConfigError(f"key '{key}': unknown diagnostic toggle")
            cfg.diag[name] = _parse_bool(key, value)
        elif key == "report.formats":
            cfg.report_formats = [v.strip() for v in value.split(",")]
        elif key == "attack.eps":
            cfg.attack_eps = tuple(_parse_float(key, v) for v in value.split(","))
        elif key == "attack.pgd_iters":
            cfg.pgd_iters = _parse_int(key, value)
        elif key == "attack.pgd_step_div":
            cfg.pgd_step_div = _parse_float(key, value)
        elif key == "corrupt.severities":
            cfg.severities = tuple(_parse_int(key, v) for v in value.split(","))
        else:
            raise ConfigError(f"key '{key}': unknown configuration key")
    try:
        tc.validate()
    except (ValueError, KdfuseError) as e:
        raise ConfigError(str(e)) from None
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                        else v for v in row])


def _fused_signals(cfg: RunConfig, arrays, proj=None):
    dtype = cfg.train.dtype
    fus = cfg.fusion
    z_t = arrays["teacher_logits"].astype(dtype)
    z_c = average_prompt_logits(arrays["clip_prompt_logits"]).astype(dtype)
    z_f = fuse_logits(z_t, z_c, fus.alpha, fus.logit_norm)
    f_t = arrays["teacher_features"].astype(dtype)
    f_c = arrays["clip_features"].astype(dtype)
    if proj is None:
        proj = FeatureProjection.init(
            f_c.shape[1], f_t.shape[1], cfg.train.seed + 2, dtype=dtype)
    f_f = fuse_features(f_t, project_features(f_c, proj), fus.lam)
    return z_t, z_c, z_f, f_f


def stage_fuse(cfg: RunConfig) -> None:
    _, arrays = cache_io.load_bundle(cfg.bundle)
    _, _, z_f, f_f = _fused_signals(cfg, arrays)
    cfg.out.mkdir(parents=True, exist_ok=True)
    cache_io.write_tensor(
        CacheTensor("fused_logits", z_f.astype(np.float32)),
        cfg.out / "fused_logits.rkdc")
    cache_io.write_tensor(
        CacheTensor("fused_features", f_f.astype(np.float32)),
        cfg.out / "fused_features.rkdc")


def stage_train(cfg: RunConfig) -> None:
    manifest, arrays = cache_io.load_bundle(cfg.bundle)
    net, proj, report = train(manifest, arrays, cfg.train)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_student(net, cfg.out / "student")
    cache_io.write_tensor(
        CacheTensor("proj_w", proj.weight.astype(np.float32)),
        cfg.out / "student" / "proj_w.rkdc")
    cache_io.write_tensor(
        CacheTensor("proj_b", proj.bias.astype(np.float32)),
        cfg.out / "student" / "proj_b.rkdc")
    rows = [
        (e, bd.ce, bd.logit_kl, bd.feat, bd.total, t1)
        for e, (bd, t1) in enumerate(
            zip(report.epoch_losses, report.val_top1_per_epoch))
    ]
    _write_csv(cfg.out / "train.csv",
               ["epoch", "ce", "kl", "feat", "total", "val_top1"], rows)


def stage_diagnose(cfg: RunConfig) -> None:
    _, arrays = cache_io.load_bundle(cfg.bundle)
    z_t, z_c, z_f, _ = _fused_signals(cfg, arrays)
    labels = arrays["labels"]
    cfg.out.mkdir(parents=True, exist_ok=True)
    thr = cfg.fusion.certainty_threshold

    if cfg.diag.get("quadrants", True):
        qt = quadrant_counts(z_t, labels, thr)
        qc = quadrant_counts(z_c, labels, thr)
        qf = quadrant_counts(z_f, labels, thr)
        for name, q in [("quadrants", qf), ("quadrants_teacher", qt),
                        ("quadrants_clip", qc)]:
            n = q.total
            _write_csv(cfg.out / f"{name}.csv", ["quadrant", "count", "pct"],
                       [(label, c, c / n * 100.0)
                        for label, c in zip(QUADRANTS, q.as_tuple())])
        deltas = quadrant_delta(qt, qf)
        _write_csv(cfg.out / "quadrant_deltas.csv", ["quadrant", "delta_pct"],
                   list(zip(QUADRANTS, deltas)))

    if cfg.diag.get("correlation", True):
        for name, z in [("correlation", z_f), ("correlation_teacher", z_t),
                        ("correlation_clip", z_c)]:
            corr = interclass_correlation(z)
            header = [f"c{i}" for i in range(corr.shape[0])]
            _write_csv(cfg.out / f"{name}.csv", header,
                       [tuple(float(v) for v in row) for row in corr])

    if cfg.diag.get("ensemble", True):
        rows = []
        for alpha in np.arange(0.0, 1.0001, 0.05):
            alpha = round(float(alpha), 2)
            st = ensemble_stats(z_t, z_c, labels, alpha)
            rows.append((alpha, float(st.bias_f.mean()),
                         float(st.var_f.mean()), st.error_f))
        _write_csv(cfg.out / "ensemble.csv",
                   ["alpha", "bias_F", "var_F", "error_F"], rows)


def _load_trained(cfg: RunConfig, stage: str):
    sdir = cfg.out / "student"
    if not (sdir / "student.txt").exists():
        raise StageError(stage, "no trained student found; run the train stage first")
    return load_student(sdir, dtype=cfg.train.dtype)


def _val_split(cfg: RunConfig, arrays):
    _, va = split_train_val(
        len(arrays["images"]), cfg.train.val_fraction, cfg.train.seed)
    return (arrays["images"].astype(cfg.train.dtype)[va],
            arrays["labels"][va].astype(np.int64))


def stage_attack(cfg: RunConfig) -> None:
    net = _load_trained(cfg, "attack")
    _, arrays = cache_io.load_bundle(cfg.bundle)
    x, y = _val_split(cfg, arrays)
    rows = []
    for eps in cfg.attack_eps:
        x_adv = fgsm_attack(net, x, y, eps)
        rows.append(("fgsm", eps, *evaluate(net, x_adv, y)))
    for eps in cfg.attack_eps:
        x_adv = pgd_attack(net, x, y, eps, eps / cfg.pgd_step_div, cfg.pgd_iters)
        rows.append(("pgd", eps, *evaluate(net, x_adv, y)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.out / "attacks.csv", ["kind", "param", "top1", "top5"], rows)


def stage_corrupt_eval(cfg: RunConfig) -> None:
    net = _load_trained(cfg, "corrupt-eval")
    _, arrays = cache_io.load_bundle(cfg.bundle)
    x, y = _val_split(cfg, arrays)
    rows = []
    sums = np.zeros(2)
    count = 0
    for kind in CORRUPTION_KINDS:
        for sev in cfg.severities:
            xc = corrupt(x, kind, sev, seed=cfg.train.seed + 1000 + sev)
            t1, t5 = evaluate(net, xc, y)
            rows.append((kind, float(sev), t1, t5))
            sums += (t1, t5)
            count += 1
    rows.append(("average", 0.0, float(sums[0] / count), float(sums[1] / count)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.out / "corruptions.csv",
               ["kind", "param", "top1", "top5"], rows)


def stage_report(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.report_formats:
        rows = []
        for name in ("attacks.csv", "corruptions.csv"):
            path = cfg.out / name
            if path.exists():
                with open(path, newline="", encoding="utf-8") as fh:
                    reader = csv.reader(fh)
                    next(reader)
                    rows.extend(tuple(r) for r in reader)
        with open(cfg.out / "robustness.csv", "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "param", "top1", "top5"])
            w.writerows(rows)
    if "json" in cfg.report_formats:
        summary: dict = {"bundle": str(cfg.bundle), "outputs": []}
        for name in ("fused_logits.rkdc", "fused_features.rkdc", "train.csv",
                     "quadrants.csv", "quadrant_deltas.csv", "correlation.csv",
                     "ensemble.csv", "attacks.csv", "corruptions.csv",
                     "robustness.csv"):
            if (cfg.out / name).exists():
                summary["outputs"].append(name)
        train_csv = cfg.out / "train.csv"
        if train_csv.exists():
            with open(train_csv, newline="", encoding="utf-8") as fh:
                last = list(csv.DictReader(fh))[-1]
            summary["final_val_top1"] = float(last["val_top1"])
        (cfg.out / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n",
            encoding="utf-8")


_STAGE_FUNCS = {
    "fuse": stage_fuse,
    "train": stage_train,
    "diagnose": stage_diagnose,
    "attack": stage_attack,
    "corrupt-eval": stage_corrupt_eval,
    "report": stage_report,
}


def run_pipeline(cfg: RunConfig) -> int:
    """Run the requested stages in order; returns 0 only if all succeed."""
    for stage in cfg.stages:
        func = _STAGE_FUNCS[stage]
        try:
            func(cfg)
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage, e) from e
    return 0


def _add_run_parser(sub):
    p = sub.add_parser("run", help="run pipeline stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", action="append",
                   help="stage to run (repeatable; default: stages from config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--out")


def _add_gen_parser(sub):
    p = sub.add_parser("gen-synth", help="generate a synthetic bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--d-t", type=int, default=16)
    p.add_argument("--d-c", type=int, default=24)
    p.add_argument("--d-in", type=int, default=32)
    p.add_argument("--complementarity", type=float, default=0.2)
    p.add_argument("--teacher-profile", default="0.60,0.15,0.05,0.20")
    p.add_argument("--clip-profile", default="0.55,0.10,0.10,0.25")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kdfuse")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)
    _add_gen_parser(sub)
    args = parser.parse_args(argv)

    try:
        if args.command == "gen-synth":
            spec = SynthSpec(
                n=args.n, k=args.k, m=args.m, d_t=args.d_t, d_c=args.d_c,
                d_in=args.d_in,
                teacher_profile=tuple(float(v) for v in
                                      args.teacher_profile.split(",")),
                clip_profile=tuple(float(v) for v in args.clip_profile.split(",")),
                complementarity=args.complementarity,
                seed=args.seed,
            )
            manifest = gen_synth(spec, args.out)
            print(f"bundle written to {args.out} "
                  f"(N={manifest.sample_count}, K={manifest.class_count}, "
                  f"M={manifest.prompt_count})")
            return 0
        cfg = parse_run_config(args.config)
        if args.stage:
            for s in args.stage:
                if s not in STAGES:
                    raise ConfigError(f"key 'stages': unknown stage '{s}'")
            cfg.stages = args.stage
        if args.seed is not None:
            cfg.train.seed = args.seed
        if args.precision is not None:
            cfg.train.precision = args.precision
        if args.out is not None:
            cfg.out = Path(args.out)
        code = run_pipeline(cfg)
        print(f"pipeline ok: {', '.join(cfg.stages)} -> {cfg.out}")
        return code
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KdfuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
