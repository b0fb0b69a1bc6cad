"""Command-line entry point.

    scarseg gen     --out DIR --counts E,M,H --seed S
    scarseg train   --data DIR --config FILE --out RUNDIR [--baseline]
    scarseg eval    --data DIR --run RUNDIR --out report.csv
    scarseg compare --a report_a.csv --b report_b.csv --out compare.csv
    scarseg report  --eval report.csv --out DIR

Exit codes: 0 success, 1 internal failure, 2 invalid user input. Runs are
reproducible: rerunning any command on unchanged inputs rewrites its
outputs byte-identically (per kernel backend).
"""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .curriculum import (
    STREAM_SPLIT,
    TrainConfig,
    per_sample_losses,  # noqa: F401  (re-exported for scripting convenience)
    train,
    train_baseline,
    write_train_record,
)
from .errors import FormatError, UserInputError
from .metrics import (
    DegenerateInputError,
    EvalReport,
    dice_coeff,
    read_report_csv,
    scar_burden,
    wilcoxon_signed_rank,
    write_report_csv,
)
from .numcore import PrngStream
from .phantom import Dataset, GenConfig, generate_dataset, load_dataset, save_dataset, split_dataset
from .segnet import forward_batch, load_checkpoint, save_checkpoint
from .svgplot import bland_altman_svg, burden_scatter_svg

CHECKPOINT_NAME = "checkpoint.lgep"
CONFIG_ECHO_NAME = "config.resolved"
SCATTER_NAME = "burden_scatter.svg"
BLAND_ALTMAN_NAME = "bland_altman.svg"


@dataclass(frozen=True)
class RunConfig:
    """Flat key=value run configuration (defaults match the paper-scale setup)."""

    seed: int = 0
    train_fraction: float = 0.8
    lr: float = 1e-4
    weight_decay: float = 1e-9
    alpha: float = 0.25
    beta: float = 0.5
    gamma: float = 2.0
    epsilon: float = 1e-6
    stages: int = 3
    epochs: tuple = (50, 50, 50)
    batch_sizes: tuple = (32, 4, 4)
    w_fg: tuple = (0.6, 0.75, 0.8)
    w_bg: tuple = (0.4, 0.25, 0.2)
    p_spike: float = 90.0
    spike_multiplier: int = 2
    threshold: float = 0.5

    def validate(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise UserInputError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not 0.0 < self.threshold < 1.0:
            raise UserInputError(f"threshold must be in (0, 1), got {self.threshold}")
        try:
            self.train_config()  # TrainConfig owns the remaining invariants
        except ValueError as exc:
            raise UserInputError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            stages=self.stages,
            seed=self.seed,
            lr=self.lr,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_sizes=self.batch_sizes,
            w_fg=self.w_fg,
            w_bg=self.w_bg,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            eps=self.epsilon,
            p_spike=self.p_spike,
            spike_multiplier=self.spike_multiplier,
        )

    def serialize(self) -> str:
        lines = [
            "# scarseg resolved configuration",
            f"# version: {__version__}",
            f"# kernels: {kernels.BACKEND}",
        ]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(_format_scalar(v) for v in value)
            else:
                text = _format_scalar(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"


def _format_scalar(v):
    return repr(v) if isinstance(v, float) else str(v)


def _parse_scalar(text, kind, key, lineno):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise UserInputError(f"config line {lineno}: key '{key}': cannot parse {text!r}")
    raise AssertionError(kind)


def parse_config(text: str) -> RunConfig:
    """Parse flat key=value text with '#' comments; unknown keys are rejected."""
    spec = {f.name: f for f in fields(RunConfig)}
    defaults = RunConfig()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserInputError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in spec:
            raise UserInputError(f"config line {lineno}: unknown key '{key}'")
        if key in values:
            raise UserInputError(f"config line {lineno}: duplicate key '{key}'")
        default = getattr(defaults, key)
        if isinstance(default, tuple):
            elem = int if all(isinstance(v, int) for v in default) else float
            values[key] = tuple(
                _parse_scalar(part.strip(), elem, key, lineno) for part in value.split(",")
            )
        else:
            values[key] = _parse_scalar(value, type(default), key, lineno)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise UserInputError(f"config file not found: {path}")
    return parse_config(path.read_text())


def _evaluate_split(params, test: Dataset, threshold: float) -> EvalReport:
    report = EvalReport()
    for start in range(0, len(test.samples), 32):
        chunk = test.samples[start : start + 32]
        x = np.stack(
            [
                np.stack([s.image.astype(np.float64), (s.myo > 0).astype(np.float64)])
                for s in chunk
            ]
        )
        yhat, _ = forward_batch(params, x)
        for b, s in enumerate(chunk):
            myo = s.myo > 0
            pred = (yhat[b, 0] > threshold) & myo
            report.add(
                s.sample_id,
                dice_coeff(s.scar, pred),
                scar_burden(s.scar, myo),
                scar_burden(pred, myo),
            )
    return report


def cmd_gen(args) -> int:
    try:
        counts = tuple(int(part) for part in args.counts.split(","))
    except ValueError:
        raise UserInputError(f"--counts must be three comma-separated integers, got {args.counts!r}")
    if len(counts) != 3 or any(c < 0 for c in counts):
        raise UserInputError(f"--counts must be three nonnegative integers, got {args.counts!r}")
    if sum(counts) < 1:
        raise UserInputError("empty dataset: counts sum to zero")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UserInputError(f"cannot create output directory {out}: {exc}")
    ds = generate_dataset(GenConfig(counts=counts, seed=args.seed))
    manifest = save_dataset(ds, out)
    print(f"wrote {len(ds)} samples ({counts[0]}/{counts[1]}/{counts[2]} per difficulty) "
          f"to {manifest.parent}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds = load_dataset(args.data)
    rundir = Path(args.out)
    rundir.mkdir(parents=True, exist_ok=True)

    train_ds, _ = split_dataset(ds, cfg.train_fraction, PrngStream(cfg.seed, STREAM_SPLIT))
    tcfg = cfg.train_config()
    runner = train_baseline if args.baseline else train
    params, record = runner(train_ds, tcfg, progress=_progress(args))

    save_checkpoint(params, None, rundir / CHECKPOINT_NAME)
    write_train_record(record, rundir)
    (rundir / CONFIG_ECHO_NAME).write_text(cfg.serialize())
    mode = "baseline" if args.baseline else "curriculum"
    print(f"{mode} training done: {len(train_ds)} samples, "
          f"{len(record.epoch_losses)} epochs, artifacts in {rundir}")
    return 0


def _progress(args):
    if not getattr(args, "verbose", False):
        return None

    def log(stage, epoch, loss):
        print(f"  stage {stage} epoch {epoch}: mean loss {loss:.6f}")

    return log


def cmd_eval(args) -> int:
    rundir = Path(args.run)
    ckpt_path = rundir / CHECKPOINT_NAME
    if not ckpt_path.is_file():
        raise UserInputError(f"missing checkpoint: {ckpt_path}")
    cfg = load_config(rundir / CONFIG_ECHO_NAME)
    params, _ = load_checkpoint(ckpt_path)
    ds = load_dataset(args.data)
    _, test_ds = split_dataset(ds, cfg.train_fraction, PrngStream(cfg.seed, STREAM_SPLIT))
    report = _evaluate_split(params, test_ds, cfg.threshold)
    write_report_csv(report, args.out)
    print(f"evaluated {len(report.rows)} test samples -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    report_a, _ = read_report_csv(args.a)
    report_b, _ = read_report_csv(args.b)
    ids_a = {r.sample_id for r in report_a.rows}
    ids_b = {r.sample_id for r in report_b.rows}
    if ids_a != ids_b:
        missing = sorted(ids_a ^ ids_b)
        raise UserInputError(
            f"reports cover different sample ids; symmetric difference: {missing}"
        )
    rows_a = {r.sample_id: r for r in report_a.rows}
    rows_b = {r.sample_id: r for r in report_b.rows}
    ordered = sorted(ids_a)

    lines = ["metric,n_eff,W,p,method,note"]
    pairs = {
        "dice": ([rows_a[i].dice for i in ordered], [rows_b[i].dice for i in ordered]),
        "abs_burden_error": (
            [abs(rows_a[i].gt_burden - rows_a[i].pred_burden) for i in ordered],
            [abs(rows_b[i].gt_burden - rows_b[i].pred_burden) for i in ordered],
        ),
    }
    for metric, (a_vals, b_vals) in pairs.items():
        try:
            res = wilcoxon_signed_rank(a_vals, b_vals)
            lines.append(
                f"{metric},{res.n_effective},{res.statistic!r},{res.p_value!r},{res.method},"
            )
        except DegenerateInputError:
            lines.append(f"{metric},0,,,,all paired differences are zero")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote Wilcoxon comparison for {len(ordered)} paired samples -> {args.out}")
    return 0


def cmd_report(args) -> int:
    report, aggregates = read_report_csv(args.eval)
    if not report.rows:
        raise UserInputError(f"report {args.eval} has no per-sample rows to plot")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = report.gt_burdens()
    pred = report.pred_burdens()
    (out / SCATTER_NAME).write_text(burden_scatter_svg(gt, pred))
    (out / BLAND_ALTMAN_NAME).write_text(
        bland_altman_svg(
            gt,
            pred,
            mean_diff=aggregates.get("ba_mean_diff"),
            loa_low=aggregates.get("ba_loa_low"),
            loa_high=aggregates.get("ba_loa_high"),
        )
    )
    print(f"wrote {SCATTER_NAME} and {BLAND_ALTMAN_NAME} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scarseg",
        description="curriculum-staged scar segmentation on synthetic cardiac phantoms",
    )
    parser.add_argument("--version", action="version", version=f"scarseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a phantom dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--counts", required=True, help="samples per difficulty, e.g. 100,100,100")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory (from gen)")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="run directory for artifacts")
    p.add_argument("--baseline", action="store_true",
                   help="single-stage control with the same total epochs")
    p.add_argument("--verbose", action="store_true", help="print per-epoch losses")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a run on its test split")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired Wilcoxon tests between two reports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True, help="comparison CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="render scatter and Bland-Altman SVG panels")
    p.add_argument("--eval", required=True, help="report CSV from eval")
    p.add_argument("--out", required=True, help="output directory for SVGs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UserInputError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


def entry() -> None:
    sys.exit(main())
