"""Command-line entry point: calibrate, score, eval, sweep, synth, report.

Configuration precedence is CLI flags > config file > shipped defaults,
so a default run needs no flags beyond the data paths. Every command is
deterministic given its config, input files, and seed; errors exit
nonzero with a machine-readable line prefixed `error:`.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .baselines import BaselineKind, FittedBaseline, fit_baseline, parse_baseline
from .channel_stats import ChannelStatisticKind, StatVector, compute_stat_batch, gap_features
from .defaults import baseline_default, default_percentile, default_sweep_grid
from .errors import CatalystError, ConfigError, FormatError
from .feature_store import Dataset, load_manifest
from .fusion import FusionMode, SplitScores, check_compatible, method_label, score_dataset
from .metrics import EvalReport, ScoreSet, evaluate
from .scaling import CalibrationProfile, calibrate_threshold_from_matrix, sweep_percentiles
from .synth_lab import SynthSpec, generate

REPORT_COLUMNS = ["method", "statistic", "fusion", "percentile", "dataset",
                  "fpr95", "auroc", "lambda", "n_id", "n_ood"]


def _threads() -> int:
    raw = os.environ.get("CATALYST_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CATALYST_THREADS must be an integer, got {raw!r}") from None


@dataclass
class RunConfig:
    """One run's resolved settings; see README for the JSON schema."""

    id_train: str | None = None
    id_val: str | None = None
    id_test: str | None = None
    ood: str | None = None
    proxy: str | None = None
    baseline: str = "energy"
    statistic: str = "max"
    fusion: str | None = "multiplicative"
    percentile: float | str | None = None  # number, "sweep", or None for family default
    family: str = "cifar"
    backbone: str | None = None
    grid: list[float] = field(default_factory=default_sweep_grid)
    output_dir: str = "runs"
    seed: int = 0
    allow_negative: bool = False
    tpr_target: float = 0.95
    baseline_params: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FormatError(f"config not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**raw)
        # Paths in a config file are relative to the file itself.
        for name in ("id_train", "id_val", "id_test", "ood", "proxy"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str(path.parent / value))
        if not Path(cfg.output_dir).is_absolute():
            cfg.output_dir = str(path.parent / cfg.output_dir)
        return cfg

    def apply_flags(self, args: argparse.Namespace) -> "RunConfig":
        for name in ("baseline", "statistic", "fusion", "family", "backbone", "seed"):
            value = getattr(args, name, None)
            if value is not None:
                setattr(self, name, value)
        if getattr(args, "p", None) is not None:
            self.percentile = args.p if args.p == "sweep" else float(args.p)
        if getattr(args, "grid", None) is not None:
            self.grid = parse_grid(args.grid)
        if getattr(args, "out", None) is not None:
            self.output_dir = args.out
        if getattr(args, "allow_negative", False):
            self.allow_negative = True
        if self.fusion in ("none", "null", ""):
            self.fusion = None
        return self


def parse_grid(text: str | list) -> list[float]:
    """Parse a lo:hi:step flag into the inclusive grid it spans."""
    if isinstance(text, list):
        lo, hi, step = (float(v) for v in text)
    else:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must be lo:hi:step, got {text!r}")
        lo, hi, step = (float(v) for v in parts)
    if step <= 0 or hi < lo:
        raise ConfigError(f"grid {lo}:{hi}:{step} is not increasing")
    out = []
    p = lo
    while p <= hi + 1e-9:
        out.append(round(p, 6))
        p += step
    return out


# -- pipeline assembly -------------------------------------------------------


@dataclass
class Pipeline:
    config: RunConfig
    kind: BaselineKind
    stat: ChannelStatisticKind
    mode: FusionMode | None
    profile: CalibrationProfile
    fitted: FittedBaseline
    id_train: Dataset


def _build_kind(cfg: RunConfig) -> BaselineKind:
    params = dict(cfg.baseline_params)
    name = cfg.baseline.lower().replace("-", "_")
    # The clip baseline's published operating point shifts from the 90th
    # to the 95th percentile when it runs under scale-factor fusion.
    fused = cfg.fusion is not None
    react_default = baseline_default("react_percentile_fused" if fused else "react_percentile")
    defaults = {
        "react": {"clip_percentile": react_default},
        "react_dice": {
            "clip_percentile": react_default,
            "sparsity_p": baseline_default("dice_sparsity"),
        },
        "dice": {"sparsity_p": baseline_default("dice_sparsity")},
        "ash": {"prune_p": baseline_default("ash_prune")},
        "scale": {"prune_p": baseline_default("scale_prune")},
        "knn": {"k": baseline_default("knn_k")},
    }
    merged = {**defaults.get(name, {}), **params}
    return parse_baseline(name, **merged)


def _resolve_percentile(cfg: RunConfig) -> float:
    if cfg.percentile is None:
        return default_percentile(cfg.family, cfg.statistic, baseline=cfg.baseline, backbone=cfg.backbone)
    if isinstance(cfg.percentile, str):
        raise ConfigError(f"percentile is {cfg.percentile!r}; resolve the sweep before building a pipeline")
    return float(cfg.percentile)


def _load_split(cfg: RunConfig, role: str, required: bool = True) -> Dataset | None:
    path = getattr(cfg, role)
    if path is None:
        if required:
            raise ConfigError(f"config is missing the {role!r} manifest path")
        return None
    return Dataset.from_manifest(load_manifest(path), allow_negative=cfg.allow_negative)


def build_pipeline(cfg: RunConfig, percentile: float | None = None) -> Pipeline:
    """Load the ID training split and resolve all fitted state."""
    kind = _build_kind(cfg)
    stat = ChannelStatisticKind.parse(cfg.statistic)
    mode = None if cfg.fusion is None else FusionMode.parse(cfg.fusion)
    if mode is not None:
        check_compatible(mode, kind)

    id_train = _load_split(cfg, "id_train")
    stats = compute_stat_batch(id_train.activations, stat)
    p = percentile if percentile is not None else _resolve_percentile(cfg)
    profile = calibrate_threshold_from_matrix(stats, stat, p, source_label=id_train.manifest.name)
    features = gap_features(id_train.activations)
    fitted = fit_baseline(kind, features, id_train.head)
    return Pipeline(config=cfg, kind=kind, stat=stat, mode=mode, profile=profile,
                    fitted=fitted, id_train=id_train)


def _score_split(pipe: Pipeline, dataset: Dataset) -> SplitScores:
    return score_dataset(dataset, pipe.kind, pipe.stat, pipe.profile, pipe.mode,
                         pipe.fitted, threads=_threads())


def _eval_pair(pipe: Pipeline, id_ds: Dataset, ood_ds: Dataset) -> tuple[EvalReport, SplitScores, SplitScores]:
    id_scores = _score_split(pipe, id_ds)
    ood_scores = _score_split(pipe, ood_ds)
    score_set = ScoreSet(
        id_scores=id_scores.fused,
        ood_scores=ood_scores.fused,
        higher_is_id=id_scores.higher_is_id,
        method_label=id_scores.method_label,
    )
    return evaluate(score_set, pipe.config.tpr_target), id_scores, ood_scores


def _append_report_row(out_dir: Path, pipe: Pipeline, dataset_name: str, report: EvalReport) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.csv"
    fresh = not path.exists()
    label = method_label(pipe.kind, pipe.stat, pipe.mode)
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(REPORT_COLUMNS)
        writer.writerow([
            label,
            pipe.stat.value,
            pipe.mode.value if pipe.mode is not None else "none",
            repr(float(pipe.profile.percentile_p)),
            dataset_name,
            repr(float(report.fpr95)),
            repr(float(report.auroc)),
            repr(float(report.threshold)),
            report.n_id,
            report.n_ood,
        ])
    return path


# -- sweep -------------------------------------------------------------------


def run_sweep(cfg: RunConfig) -> tuple[list[tuple[float, float, float]], float]:
    """Sweep the grid on the proxy split; returns (rows, argmin-FPR95 percentile)."""
    kind = _build_kind(cfg)
    stat = ChannelStatisticKind.parse(cfg.statistic)
    mode = None if cfg.fusion is None else FusionMode.parse(cfg.fusion)
    if mode is not None:
        check_compatible(mode, kind)

    id_train = _load_split(cfg, "id_train")
    proxy = _load_split(cfg, "proxy", required=False) or _load_split(cfg, "ood")
    id_eval = (_load_split(cfg, "id_val", required=False)
               or _load_split(cfg, "id_test", required=False)
               or id_train)

    train_stats = compute_stat_batch(id_train.activations, stat)
    proxy_stats = compute_stat_batch(proxy.activations, stat)
    features = gap_features(id_train.activations)
    fitted = fit_baseline(kind, features, id_train.head)
    threads = _threads()

    id_vectors = [StatVector(values=row, kind=stat) for row in train_stats]
    proxy_vectors = [StatVector(values=row, kind=stat) for row in proxy_stats]

    def scorer(profile, _id_stats, _proxy_stats):
        id_scores = score_dataset(id_eval, kind, stat, profile, mode, fitted, threads=threads)
        proxy_scores = score_dataset(proxy, kind, stat, profile, mode, fitted, threads=threads)
        score_set = ScoreSet(
            id_scores=id_scores.fused,
            ood_scores=proxy_scores.fused,
            higher_is_id=id_scores.higher_is_id,
            method_label=id_scores.method_label,
        )
        return evaluate(score_set, cfg.tpr_target)

    result = sweep_percentiles(id_vectors, proxy_vectors, cfg.grid, scorer)
    return result.as_table(), result.best_p


def _write_sweep_csv(out_dir: Path, rows: list[tuple[float, float, float]], best_p: float) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["percentile", "fpr95", "auroc", "selected"])
        for p, fpr, auc in rows:
            writer.writerow([repr(float(p)), repr(float(fpr)), repr(float(auc)),
                             int(p == best_p)])
    return path


# -- commands ------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    cfg = RunConfig.from_file(args.config).apply_flags(args)
    out_dir = Path(cfg.output_dir)
    if cfg.percentile == "sweep":
        rows, best_p = run_sweep(cfg)
        sweep_path = _write_sweep_csv(out_dir, rows, best_p)
        print(f"sweep: {len(rows)} percentiles, argmin-FPR95 p={best_p:g} -> {sweep_path}")
        pipe = build_pipeline(cfg, percentile=best_p)
    else:
        pipe = build_pipeline(cfg)
    path = pipe.profile.save(out_dir / "profile.json")
    print(f"calibrated {pipe.stat.value} threshold c={pipe.profile.threshold_c:g} "
          f"at p={pipe.profile.percentile_p:g} from {pipe.profile.n_calibration_values} values -> {path}")
    return 0


def cmd_score(args) -> int:
    cfg = RunConfig.from_file(args.config).apply_flags(args)
    if cfg.percentile == "sweep":
        _, best_p = run_sweep(cfg)
        cfg.percentile = best_p
    pipe = build_pipeline(cfg)
    dataset = _load_split(cfg, args.split)
    scores = _score_split(pipe, dataset)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "scores.csv"
    path.write_text(scores.to_csv())
    print(f"scored {dataset.n_samples} samples of {dataset.manifest.name} "
          f"with {scores.method_label} -> {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = RunConfig.from_file(args.config).apply_flags(args)
    if cfg.percentile == "sweep":
        _, best_p = run_sweep(cfg)
        cfg.percentile = best_p
    pipe = build_pipeline(cfg)
    id_ds = _load_split(cfg, "id_test", required=False) or pipe.id_train
    ood_ds = _load_split(cfg, "ood")
    report, _, _ = _eval_pair(pipe, id_ds, ood_ds)
    path = _append_report_row(Path(cfg.output_dir), pipe, ood_ds.manifest.name, report)
    label = method_label(pipe.kind, pipe.stat, pipe.mode)
    print(f"{label} on {ood_ds.manifest.name}: FPR95={report.fpr95:.4f} "
          f"AUROC={report.auroc:.4f} lambda={report.threshold:g} -> {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = RunConfig.from_file(args.config).apply_flags(args)
    rows, best_p = run_sweep(cfg)
    path = _write_sweep_csv(Path(cfg.output_dir), rows, best_p)
    for p, fpr, auc in rows:
        print(f"p={p:<6g} FPR95={fpr:.4f} AUROC={auc:.4f}")
    print(f"argmin-FPR95 percentile: {best_p:g} -> {path}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out_dir = Path(args.out)
    id_ds, ood_ds = generate(spec)
    id_manifest = id_ds.save(out_dir / "id" / "manifest.json")
    ood_manifest = ood_ds.save(out_dir / "ood" / "manifest.json")
    (out_dir / "synth.json").write_text(spec.to_json())
    config = {
        "id_train": "id/manifest.json",
        "id_test": "id/manifest.json",
        "ood": "ood/manifest.json",
        "output_dir": ".",
        "seed": spec.seed,
    }
    (out_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"generated {id_manifest.n_samples} ID + {ood_manifest.n_samples} OOD samples "
          f"(n={spec.n_channels}, k={spec.spatial_k}, seed={spec.seed}) -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    csv_path = run_dir / "report.csv"
    if not csv_path.exists():
        raise FormatError(f"no report.csv in {run_dir}")
    with csv_path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"report.csv in {run_dir} has no rows")
    markdown = render_markdown(rows)
    out_path = Path(args.out) if args.out else run_dir / "report.md"
    out_path.write_text(markdown)
    print(markdown, end="")
    print(f"-> {out_path}")
    return 0


def render_markdown(rows: list[dict]) -> str:
    """Pivot report rows into a method x dataset table with FPR95/AUROC pairs."""
    datasets: list[str] = []
    methods: list[str] = []
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    for row in rows:
        ds, method = row["dataset"], row["method"]
        if ds not in datasets:
            datasets.append(ds)
        if method not in methods:
            methods.append(method)
        cells[(method, ds)] = (float(row["fpr95"]), float(row["auroc"]))

    def averages(method: str) -> tuple[float, float]:
        pairs = [cells[(method, ds)] for ds in datasets if (method, ds) in cells]
        fprs = [p[0] for p in pairs]
        aucs = [p[1] for p in pairs]
        return sum(fprs) / len(fprs), sum(aucs) / len(aucs)

    methods.sort(key=lambda m: averages(m)[0])
    columns = datasets + ["Average"]
    table: dict[str, dict[str, tuple[float, float]]] = {}
    for method in methods:
        table[method] = {ds: cells[(method, ds)] for ds in datasets if (method, ds) in cells}
        table[method]["Average"] = averages(method)

    best_fpr = {col: min(t[col][0] for t in table.values() if col in t) for col in columns}
    best_auc = {col: max(t[col][1] for t in table.values() if col in t) for col in columns}

    def fmt(value: float, best: float) -> str:
        text = f"{100.0 * value:.2f}"
        return f"**{text}**" if value == best else text

    header = "| Method | " + " | ".join(f"{c} FPR95 ↓ | {c} AUROC ↑" for c in columns) + " |"
    divider = "|" + " --- |" * (1 + 2 * len(columns))
    lines = ["# OOD detection report", "", header, divider]
    for method in methods:
        parts = [method]
        for col in columns:
            if col in table[method]:
                fpr, auc = table[method][col]
                parts.append(fmt(fpr, best_fpr[col]))
                parts.append(fmt(auc, best_auc[col]))
            else:
                parts.extend(["—", "—"])
        lines.append("| " + " | ".join(parts) + " |")
    lines.append("")
    lines.append("Values are percentages; FPR95 lower is better, AUROC higher is better. "
                 "Best value per column in bold.")
    return "\n".join(lines) + "\n"


# -- argument parsing -----------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, help="run config JSON path")
    parser.add_argument("--baseline", help="msp|energy|react|dice|react_dice|ash|scale|knn")
    parser.add_argument("--stat", dest="statistic", help="mean|std|max|median|entropy")
    parser.add_argument("--fusion", help="multiplicative|additive|knn_divide|standalone_scale|none")
    parser.add_argument("--p", help="scale-factor percentile, or 'sweep'")
    parser.add_argument("--grid", help="sweep grid lo:hi:step")
    parser.add_argument("--family", help="default-percentile family: cifar|imagenet")
    parser.add_argument("--backbone", help="backbone name for imagenet react-fusion defaults")
    parser.add_argument("--seed", type=int, help="run seed recorded in outputs")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--allow-negative", action="store_true",
                        help="accept dumps with negative activations (exotic backbones)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catalyst",
        description="Post-hoc OOD detection: channel-statistic scale factors fused with baseline scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate the clipping threshold on the ID training split")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="write per-sample scores for one split")
    _add_common(p)
    p.add_argument("--split", default="id_test", choices=["id_train", "id_val", "id_test", "ood", "proxy"])
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score ID/OOD splits and append an FPR95/AUROC row")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep the percentile grid on the proxy split")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic ID/OOD benchmark")
    p.add_argument("--spec", help="synth spec JSON (defaults to the built-in spec)")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="aggregate report.csv rows into a Markdown table")
    p.add_argument("--run-dir", required=True, help="directory holding report.csv")
    p.add_argument("--out", help="markdown output path (default: <run-dir>/report.md)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CatalystError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
