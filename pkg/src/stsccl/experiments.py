"""Metrics, reference predictors and the experiment drivers behind the CLI."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, dump_config, load_config
from .exceptions import ConfigError
from .graph_data import (GraphSpec, Scaler, TrafficSeries, chronological_split, load_dataset, make_windows,
                         save_dataset, scaled, synth_traffic)
from .training import VARIANT_LABELS, VARIANTS, FitResult, LossBundle, Trainer, fit, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

COMMANDS = ("generate-synthetic", "train", "evaluate", "ablate", "sweep", "report")
SWEEP_PARAMS = {
    "epsilon": ("train", "epsilon"),
    "top_u": ("cl", "top_u"),
    "edge_mask_rate": ("aug", "edge_mask_rate"),
    "attr_mask_rate": ("aug", "attr_mask_rate"),
}


def compute_metrics(pred, truth, mape_floor: float = 1e-3) -> tuple[float, float, float]:
    """RMSE, MAE and MAPE (percent). MAPE skips entries with ``|truth| <= mape_floor``
    and is NaN when no entry qualifies."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = pred - truth
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    valid = np.abs(truth) > mape_floor
    mape = float(np.mean(np.abs(err[valid]) / np.abs(truth[valid])) * 100) if valid.any() else math.nan
    return rmse, mae, mape


@dataclass
class MetricReport:
    variant: str
    rmse: float
    mae: float
    mape: float
    n_seeds: int = 1
    rmse_std: Optional[float] = None
    mae_std: Optional[float] = None
    mape_std: Optional[float] = None
    config_hash: str = ""
    per_seed: list = field(default_factory=list)

    @classmethod
    def aggregate(cls, variant: str, rows: Sequence[tuple], config_hash: str = "") -> "MetricReport":
        """Mean and sample std over per-seed ``(seed, rmse, mae, mape)`` rows."""
        arr = np.array([r[1:] for r in rows], dtype=np.float64)
        n = len(rows)
        mean = [float(np.nanmean(c)) if np.isfinite(c).any() else math.nan for c in arr.T]
        if n > 1:
            std = [float(np.nanstd(c, ddof=1)) if np.isfinite(c).sum() > 1 else math.nan for c in arr.T]
        else:
            std = [None, None, None]
        return cls(variant, *mean, n_seeds=n, rmse_std=std[0], mae_std=std[1], mape_std=std[2],
                   config_hash=config_hash, per_seed=[tuple(r) for r in rows])

    def cells(self) -> list[str]:
        def fmt(m, s, pct=False):
            unit = "%" if pct else ""
            if m is None or math.isnan(m):
                return "n/a"
            return f"{m:.4f}{unit}" if s is None else f"{m:.4f}{unit}±{s:.4f}{unit}"
        return [VARIANT_LABELS.get(self.variant, self.variant), fmt(self.rmse, self.rmse_std),
                fmt(self.mae, self.mae_std), fmt(self.mape, self.mape_std, pct=True)]


# --- data plumbing ------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> tuple[TrafficSeries, GraphSpec]:
    d = cfg.data
    if d.series_path and d.graph_path:
        return load_dataset(d.series_path, d.graph_path)
    if not d.synthetic:
        raise ConfigError("data.series_path and data.graph_path are required when data.synthetic is false")
    return synth_traffic(d.nodes, d.days, d.interval, d.seed, noise=d.noise)


def _stack_windows(series: TrafficSeries, rng: range, p: int, k: int):
    batches = list(make_windows(series, rng, p, k, batch_size=10 ** 9, shuffle=False))
    return batches[0]


def predict_split(trainer: Trainer, series: TrafficSeries, scaler: Scaler, rng: range,
                  batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Forecasts (original units) and ground truth for every window in ``rng``."""
    tc = trainer.settings.train
    data = scaled(series, scaler)
    preds, truths = [], []
    for batch in make_windows(data, rng, tc.p, tc.k, batch_size, shuffle=False):
        preds.append(scaler.inverse(trainer.predict(batch.history).numpy()))
        truths.append(scaler.inverse(batch.future))
    return np.concatenate(preds), np.concatenate(truths)


def evaluate_trainer(trainer: Trainer, series: TrafficSeries, scaler: Scaler, rng: range,
                     mape_floor: float = 1e-3) -> tuple[float, float, float]:
    pred, truth = predict_split(trainer, series, scaler, rng)
    return compute_metrics(pred, truth, mape_floor)


def naive_baselines(series: TrafficSeries, splits, p: int, k: int, mape_floor: float = 1e-3) -> dict[str, MetricReport]:
    """Last-value persistence and time-of-day historical average on the test split."""
    train_rng, _, test_rng = splits
    batch = _stack_windows(series, test_rng, p, k)
    persistence = np.repeat(batch.history[:, -1:], k, axis=1)

    spd = series.steps_per_day
    train_vals = series.values[train_rng.start:train_rng.stop]
    tod = np.arange(train_rng.start, train_rng.stop) % spd
    profile = np.stack([train_vals[tod == s].mean(axis=0) if (tod == s).any() else train_vals.mean(axis=0)
                        for s in range(spd)])
    future_idx = batch.anchors[:, None] + np.arange(1, k + 1)
    hist_avg = profile[future_idx % spd]
    return {
        "persistence": MetricReport("persistence", *compute_metrics(persistence, batch.future, mape_floor)),
        "historical_average": MetricReport("historical_average",
                                           *compute_metrics(hist_avg, batch.future, mape_floor)),
    }


# --- file outputs -------------------------------------------------------------

HISTORY_FIELDS = ("epoch", "step", "l_pred", "l_sts_b", "l_sts_s", "l_sc", "total", "epsilon")


def write_history(path, history: Iterable[LossBundle], val_history: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS + ("val_l_pred",))
        rows = list(history)
        for i, b in enumerate(rows):
            last_of_epoch = i + 1 == len(rows) or rows[i + 1].epoch != b.epoch
            val = repr(val_history[b.epoch]) if last_of_epoch and b.epoch < len(val_history) else ""
            w.writerow([b.epoch, b.step] + [repr(getattr(b, f)) for f in HISTORY_FIELDS[2:]] + [val])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


METRIC_FIELDS = ("variant", "n_seeds", "rmse", "rmse_std", "mae", "mae_std", "mape", "mape_std", "config_hash")


def write_metrics(path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in reports:
            w.writerow([r.variant, r.n_seeds] + ["" if getattr(r, f) is None else repr(getattr(r, f))
                                                 for f in METRIC_FIELDS[2:8]] + [r.config_hash])


def write_per_seed(path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("variant", "seed", "rmse", "mae", "mape"))
        for r in reports:
            for seed, *vals in r.per_seed:
                w.writerow([r.variant, seed] + [repr(float(v)) for v in vals])


def read_metrics(path) -> list[MetricReport]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            num = {k: (float(row[k]) if row[k] != "" else None) for k in METRIC_FIELDS[2:8]}
            out.append(MetricReport(row["variant"], num["rmse"], num["mae"], num["mape"], n_seeds=int(row["n_seeds"]),
                                    rmse_std=num["rmse_std"], mae_std=num["mae_std"], mape_std=num["mape_std"],
                                    config_hash=row["config_hash"]))
    return out


def markdown_table(reports: Sequence[MetricReport]) -> str:
    lines = ["| Variant | RMSE | MAE | MAPE |", "|---|---|---|---|"]
    lines += ["| " + " | ".join(r.cells()) + " |" for r in reports]
    return "\n".join(lines) + "\n"


def ordering_check(reports: Sequence[MetricReport]) -> Optional[str]:
    """Flag text when the full model's mean MAE exceeds the encoder-only variant's."""
    by_name = {r.variant: r for r in reports}
    if "full" in by_name and "sts_cm_only" in by_name and by_name["full"].mae > by_name["sts_cm_only"].mae:
        return (f"ordering flag: full MAE {by_name['full'].mae:.4f} > sts_cm_only MAE "
                f"{by_name['sts_cm_only'].mae:.4f}")
    return None


def plot_curves(history_path, out_path) -> Optional[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    rows = read_history(history_path)
    if not rows:
        return None
    step = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name in ("total", "l_pred", "l_sts_b", "l_sts_s", "l_sc"):
        ax.plot(step, [float(r[name]) for r in rows], label=name, lw=1)
    val = [(int(r["step"]), float(r["val_l_pred"])) for r in rows if r["val_l_pred"]]
    if val:
        ax.plot(*zip(*val), "o-", label="val l_pred", ms=3)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)


# --- commands -----------------------------------------------------------------

def _seeds(cfg: ExperimentConfig, n: Optional[int] = None) -> list[int]:
    n = cfg.eval.n_seeds if n is None else n
    return [cfg.train.seed + i for i in range(n)]


def _fit(cfg: ExperimentConfig, series, graph, seed: int) -> FitResult:
    settings = cfg.with_values(train={"seed": seed}).settings
    return fit(series, graph, settings, splits=chronological_split(series, cfg.data.split))


def train_command(cfg: ExperimentConfig, out: Path) -> dict:
    series, graph = load_data(cfg)
    result = _fit(cfg, series, graph, cfg.train.seed)
    ckpt = out / "checkpoint.pt"
    save_checkpoint(ckpt, result.best_state, result.scaler, result.splits)
    write_history(out / "history.csv", result.history, result.val_history)
    (out / "config.cfg").write_text(dump_config(cfg))
    return {"checkpoint": ckpt, "history": out / "history.csv", "result": result}


def evaluate_command(cfg: ExperimentConfig, out: Path, checkpoint: Optional[Path] = None) -> dict:
    ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.pt"
    if not ckpt.exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt}; run 'train' first")
    series, graph = load_data(cfg)
    trainer, scaler, splits = load_checkpoint(ckpt, graph, d_in=series.n_channels)
    metrics = evaluate_trainer(trainer, series, scaler, splits[2], cfg.eval.mape_floor)
    report = MetricReport(trainer.settings.train.variant, *metrics, config_hash=trainer.settings.config_hash(),
                          per_seed=[(trainer.settings.train.seed, *metrics)])
    baselines = naive_baselines(series, splits, trainer.settings.train.p, trainer.settings.train.k,
                                cfg.eval.mape_floor)
    reports = [report, *baselines.values()]
    write_metrics(out / "metrics.csv", reports)
    return {"metrics": out / "metrics.csv", "reports": reports}


def run_seeds(cfg: ExperimentConfig, series, graph, label: str, seeds: Sequence[int]) -> MetricReport:
    rows = []
    for seed in seeds:
        result = _fit(cfg, series, graph, seed)
        result.trainer.load_state(result.best_state)
        rows.append((seed, *evaluate_trainer(result.trainer, series, result.scaler, result.splits[2],
                                             cfg.eval.mape_floor)))
        log.info("%s seed %d: %s", label, seed, rows[-1][1:])
    return MetricReport.aggregate(label, rows, cfg.settings.config_hash())


def ablate_command(cfg: ExperimentConfig, out: Path, variants: Sequence[str] = VARIANTS) -> dict:
    series, graph = load_data(cfg)
    seeds = _seeds(cfg)
    reports = [run_seeds(cfg.with_values(train={"variant": v}), series, graph, v, seeds) for v in variants]
    write_metrics(out / "metrics.csv", reports)
    write_per_seed(out / "per_seed.csv", reports)
    flag = ordering_check(reports)
    write_report(out, reports, flag)
    return {"reports": reports, "flag": flag, "metrics": out / "metrics.csv"}


def parse_values(spec: str, step: float = 0.1) -> list:
    """``"a..b"`` (inclusive, ``step`` apart) or a comma list."""
    spec = str(spec).strip()
    if ".." in spec:
        lo, hi = (float(s) for s in spec.split(".."))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 10) for i in range(n)]
    return [v for v in (s.strip() for s in spec.split(",")) if v]


def sweep_command(cfg: ExperimentConfig, out: Path, param: Optional[str] = None,
                  values: Optional[str] = None) -> dict:
    param = param or cfg.sweep.param
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    section, key = SWEEP_PARAMS[param]
    grid = parse_values(values or cfg.sweep.values, cfg.sweep.step)
    cast = int if key == "top_u" else float
    series, graph = load_data(cfg)
    seeds = _seeds(cfg)
    reports = []
    for v in grid:
        run_cfg = cfg.with_values(**{section: {key: cast(float(v))}})
        reports.append(run_seeds(run_cfg, series, graph, f"{param}={cast(float(v))}", seeds))
    write_metrics(out / "metrics.csv", reports)
    write_per_seed(out / "per_seed.csv", reports)
    write_report(out, reports, None)
    return {"reports": reports, "metrics": out / "metrics.csv"}


def write_report(out: Path, reports: Sequence[MetricReport], flag: Optional[str]) -> Path:
    text = markdown_table(reports)
    if flag:
        text += f"\n> {flag}\n"
    path = out / "report.md"
    path.write_text(text)
    return path


def report_command(out: Path) -> dict:
    metrics = out / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError(f"no metrics.csv in {out}; run evaluate/ablate/sweep first")
    reports = read_metrics(metrics)
    md = write_report(out, reports, ordering_check(reports))
    curves = plot_curves(out / "history.csv", out / "curves.png") if (out / "history.csv").exists() else None
    return {"report": md, "curves": curves, "reports": reports}


def generate_command(cfg: ExperimentConfig, out: Path) -> dict:
    d = cfg.data
    series, graph = synth_traffic(d.nodes, d.days, d.interval, d.seed, noise=d.noise)
    paths = {"series": out / "series.npz", "graph": out / "graph.npz"}
    save_dataset(series, graph, paths["series"], paths["graph"])
    return paths


def run_experiment(config_path, command: str, seed: Optional[int] = None, out=None, **options) -> dict:
    """Dispatch one CLI command; returns the written paths and in-memory reports."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {COMMANDS}")
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    if seed is not None:
        cfg = cfg.with_values(train={"seed": seed})
    data_overrides = {k: v for k, v in options.pop("data", {}).items() if v is not None}
    if data_overrides:
        cfg = cfg.with_values(data=data_overrides)
    out = Path(out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    if command == "generate-synthetic":
        return generate_command(cfg, out)
    if command == "train":
        return train_command(cfg, out)
    if command == "evaluate":
        return evaluate_command(cfg, out, options.get("checkpoint"))
    if command == "ablate":
        return ablate_command(cfg, out)
    if command == "sweep":
        return sweep_command(cfg, out, options.get("param"), options.get("values"))
    return report_command(out)
