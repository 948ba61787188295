"""Traffic graphs, observation series, splitting, windowing and a synthetic generator.

Arrays follow the ``[time, node, channel]`` layout throughout. Batches add a
leading sample axis, so a history window is ``[B, P, N, d_in]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, EmptyStreamError, LoadError

N_POI = 7
SEMANTIC_DIM = N_POI + 7 + 2 + 2
DEFAULT_START = np.datetime64("2019-01-01T00:00")


@dataclass(frozen=True)
class GraphSpec:
    n_nodes: int
    a_con: np.ndarray
    coords: np.ndarray
    semantic: np.ndarray
    a_dist: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.n_nodes
        if n < 1:
            raise LoadError(f"n_nodes must be positive, got {n}")
        for name in ("a_con", "coords", "semantic"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise LoadError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if self.a_con.shape != (n, n):
            raise LoadError(f"a_con must be {n}x{n}, got {self.a_con.shape}")
        if not np.isin(self.a_con, (0, 1)).all():
            raise LoadError("a_con entries must be 0 or 1")
        if not np.array_equal(self.a_con, self.a_con.T):
            raise LoadError("a_con must be symmetric")
        if not np.all(np.diag(self.a_con) == 1):
            raise LoadError("a_con must carry self-loops on the diagonal")
        if self.coords.shape != (n, 2) or not np.isfinite(self.coords).all():
            raise LoadError("coords must be a finite N x 2 matrix")
        sem = self.semantic
        if sem.ndim != 2 or (sem < 0).any() or not np.allclose(sem.sum(1), 1.0, atol=1e-9, rtol=0):
            raise LoadError("semantic rows must be probability vectors")
        if self.a_dist is not None:
            if self.a_dist.shape != (n, n) or (self.a_dist < 0).any():
                raise LoadError("a_dist must be a nonnegative N x N matrix")
        for arr in (self.a_con, self.coords, self.semantic, self.a_dist):
            if arr is not None:
                arr.setflags(write=False)

    @classmethod
    def build(cls, a_con, coords, semantic, a_dist=None) -> "GraphSpec":
        """Symmetrize, add self-loops and renormalize semantics before validating."""
        a = np.asarray(a_con, dtype=np.float64)
        a = ((a + a.T) > 0).astype(np.float64)
        np.fill_diagonal(a, 1.0)
        sem = np.asarray(semantic, dtype=np.float64)
        if (sem < 0).any():
            raise LoadError("semantic entries must be nonnegative")
        sums = sem.sum(axis=1, keepdims=True)
        if (sums <= 0).any():
            row = int(np.argmin(sums[:, 0]))
            raise LoadError(f"semantic row {row} sums to zero")
        dist = None
        if a_dist is not None:
            dist = np.asarray(a_dist, dtype=np.float64)
            dist = np.maximum(dist, dist.T)
        return cls(
            n_nodes=a.shape[0],
            a_con=a,
            coords=np.asarray(coords, dtype=np.float64),
            semantic=sem / sums,
            a_dist=dist,
        )

    @property
    def n_semantic(self) -> int:
        return self.semantic.shape[1]


@dataclass(frozen=True)
class TrafficSeries:
    values: np.ndarray
    interval_minutes: int
    calendar: np.ndarray
    start: np.datetime64 = DEFAULT_START

    def __post_init__(self):
        if self.values.ndim != 3:
            raise LoadError(f"values must be T x N x d_in, got shape {self.values.shape}")
        if self.interval_minutes <= 0 or (24 * 60) % self.interval_minutes:
            raise LoadError(f"interval_minutes={self.interval_minutes} must divide a day")
        bad = np.argwhere(~np.isfinite(self.values))
        if len(bad):
            t, node, ch = (int(v) for v in bad[0])
            raise LoadError(f"non-finite value at (t={t}, node={node}, channel={ch})")
        if self.calendar.shape != (self.values.shape[0], 3):
            raise LoadError("calendar must be T x 3 (day_of_week, is_weekend, is_holiday)")
        self.values.setflags(write=False)
        self.calendar.setflags(write=False)

    @property
    def steps_per_day(self) -> int:
        return 24 * 60 // self.interval_minutes

    @property
    def steps_per_week(self) -> int:
        return 7 * self.steps_per_day

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]

    def timestamps(self) -> np.ndarray:
        step = np.timedelta64(self.interval_minutes, "m")
        return self.start + step * np.arange(self.n_steps)


@dataclass
class WindowBatch:
    history: np.ndarray
    future: np.ndarray
    day_lag: np.ndarray
    week_lag: np.ndarray
    anchors: np.ndarray
    day_flag: np.ndarray
    week_flag: np.ndarray

    def __len__(self) -> int:
        return len(self.anchors)


def calendar_for(start: np.datetime64, n_steps: int, interval_minutes: int,
                 holidays: Sequence[np.datetime64] = ()) -> np.ndarray:
    """Day-of-week (Monday=0), weekend flag and holiday flag for each step."""
    stamps = start + np.timedelta64(interval_minutes, "m") * np.arange(n_steps)
    days = stamps.astype("datetime64[D]")
    # 1970-01-01 was a Thursday
    dow = (days.astype(np.int64) + 3) % 7
    holiday_days = np.asarray(holidays, dtype="datetime64[D]")
    is_holiday = np.isin(days, holiday_days)
    return np.stack([dow, dow >= 5, is_holiday], axis=1).astype(np.int64)


def semantic_vectors(poi: np.ndarray, calendar_row: np.ndarray) -> np.ndarray:
    """Concatenate POI fractions with calendar one-hots and L1-normalize each row."""
    poi = np.asarray(poi, dtype=np.float64)
    dow, weekend, holiday = (int(v) for v in calendar_row)
    cal = np.zeros(11)
    cal[dow] = 1.0
    cal[7 + weekend] = 1.0
    cal[9 + holiday] = 1.0
    rows = np.concatenate([poi, np.broadcast_to(cal, (poi.shape[0], 11))], axis=1)
    return rows / rows.sum(axis=1, keepdims=True)


def chronological_split(series_or_length, fractions=(0.6, 0.2, 0.2)) -> tuple[range, range, range]:
    """Contiguous train/val/test ranges; flooring remainders go to the test range."""
    n = series_or_length if isinstance(series_or_length, (int, np.integer)) else series_or_length.n_steps
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"need three positive split fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    n_train = int(np.floor(n * fractions[0] + 1e-9))
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    return range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, n)


def _lag_windows(values, anchors, p, lag):
    starts = anchors - lag - p + 1
    flags = starts < 0
    idx = np.clip(starts, 0, None)[:, None] + np.arange(p)
    return values[idx], flags


def window_anchors(rng: range, p: int, k: int) -> np.ndarray:
    if p < 1 or k < 1:
        raise ConfigError(f"history and horizon must be >= 1, got p={p}, k={k}")
    if len(rng) < p + k:
        raise EmptyStreamError(f"range of length {len(rng)} cannot hold p+k={p + k} steps")
    return np.arange(rng.start + p - 1, rng.stop - k)


def make_windows(series: TrafficSeries, rng: range, p: int, k: int, batch_size: int,
                 seed: int = 0, shuffle: bool = True) -> Iterator[WindowBatch]:
    """Yield aligned history / future / day-lag / week-lag windows.

    A lag window reaching before the first observation is replaced by a copy
    of the history window and flagged so its fusion weight is dropped.
    """
    anchors = window_anchors(rng, p, k)
    if shuffle:
        anchors = np.random.default_rng(seed).permutation(anchors)
    values = series.values
    for lo in range(0, len(anchors), batch_size):
        tau = anchors[lo:lo + batch_size]
        hist_idx = tau[:, None] + np.arange(-p + 1, 1)
        fut_idx = tau[:, None] + np.arange(1, k + 1)
        history = values[hist_idx]
        day_lag, day_flag = _lag_windows(values, tau, p, series.steps_per_day)
        week_lag, week_flag = _lag_windows(values, tau, p, series.steps_per_week)
        day_lag[day_flag] = history[day_flag]
        week_lag[week_flag] = history[week_flag]
        yield WindowBatch(
            history=history,
            future=values[fut_idx],
            day_lag=day_lag,
            week_lag=week_lag,
            anchors=tau.copy(),
            day_flag=day_flag,
            week_flag=week_flag,
        )


def n_batches(rng: range, p: int, k: int, batch_size: int) -> int:
    return -(-len(window_anchors(rng, p, k)) // batch_size)


def ring_graph(n_nodes: int, seed: int, n_chords: Optional[int] = None) -> np.ndarray:
    """Ring connectivity with a few seeded long-range chords, self-loops included."""
    a = np.eye(n_nodes)
    idx = np.arange(n_nodes)
    a[idx, (idx + 1) % n_nodes] = 1
    a[(idx + 1) % n_nodes, idx] = 1
    rng = np.random.default_rng(seed)
    n_chords = max(1, n_nodes // 4) if n_chords is None else n_chords
    for _ in range(n_chords):
        i = int(rng.integers(n_nodes))
        j = (i + n_nodes // 2 + int(rng.integers(-1, 2))) % n_nodes
        if i != j:
            a[i, j] = a[j, i] = 1
    return a


def synth_traffic(n_nodes: int = 12, days: int = 10, interval_minutes: int = 30, seed: int = 0,
                  noise: float = 0.1) -> tuple[TrafficSeries, GraphSpec]:
    """Seeded daily/weekly periodic flows on a ring-plus-chords network."""
    if n_nodes < 4:
        raise ConfigError(f"synthetic graph needs at least 4 nodes, got {n_nodes}")
    if days < 8:
        raise ConfigError(f"need days >= 8 so the week lag is usable, got {days}")
    if (24 * 60) % interval_minutes:
        raise ConfigError(f"interval {interval_minutes} does not divide a day")
    rng = np.random.default_rng(seed)
    spd = 24 * 60 // interval_minutes
    n_steps = days * spd
    a_con = ring_graph(n_nodes, seed)

    angle = 2 * np.pi * np.arange(n_nodes) / n_nodes
    coords = np.stack([np.cos(angle), np.sin(angle)], axis=1) * 5.0
    coords += rng.normal(scale=0.1, size=coords.shape)
    diff = coords[:, None, :] - coords[None, :, :]
    a_dist = np.sqrt((diff ** 2).sum(-1))

    calendar = calendar_for(DEFAULT_START, n_steps, interval_minutes, holidays=[DEFAULT_START])
    t = np.arange(n_steps)[:, None]
    base = rng.uniform(2.0, 4.0, n_nodes)
    amp = rng.uniform(0.8, 1.5, n_nodes)
    phase = rng.uniform(0, 2 * np.pi, n_nodes)
    daily = amp * np.sin(2 * np.pi * t / spd + phase) + 0.3 * amp * np.sin(4 * np.pi * t / spd + 2 * phase)
    weekend = calendar[:, 1:2].astype(np.float64)
    weekly = 1.0 - 0.25 * weekend

    walk = np.diag(1.0 / a_con.sum(1)) @ a_con
    eps = rng.normal(scale=noise, size=(n_steps, n_nodes))
    smooth = np.empty_like(eps)
    smooth[0] = eps[0]
    for i in range(1, n_steps):
        smooth[i] = 0.5 * smooth[i - 1] + eps[i]
    values = (base + daily) * weekly + smooth @ walk.T
    values = values[:, :, None]

    poi = rng.dirichlet(np.ones(N_POI), size=n_nodes)
    semantic = semantic_vectors(poi, calendar[0])
    series = TrafficSeries(values=values, interval_minutes=interval_minutes, calendar=calendar)
    graph = GraphSpec.build(a_con, coords, semantic, a_dist=a_dist)
    return series, graph


# --- file formats -----------------------------------------------------------

def _edges(a_con: np.ndarray) -> np.ndarray:
    i, j = np.nonzero(np.triu(a_con, k=1))
    return np.stack([i, j], axis=1)


def save_dataset(series: TrafficSeries, graph: GraphSpec, series_path, graph_path) -> None:
    """Write ``series_path`` (.npz or single-channel .csv) and ``graph_path`` (.npz or .csv edges)."""
    series_path, graph_path = Path(series_path), Path(graph_path)
    if series_path.suffix == ".npz":
        np.savez(series_path, values=series.values, interval_minutes=series.interval_minutes,
                 calendar=series.calendar, start=str(series.start))
    elif series_path.suffix == ".csv":
        if series.n_channels != 1:
            raise ConfigError("CSV series files hold a single channel; use .npz")
        with series_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp"] + [f"node_{i}" for i in range(series.n_nodes)] + ["is_holiday"])
            for stamp, row, cal in zip(series.timestamps(), series.values[:, :, 0], series.calendar):
                w.writerow([str(stamp)] + [repr(float(v)) for v in row] + [int(cal[2])])
    else:
        raise ConfigError(f"unsupported series format {series_path.suffix!r}")

    edges = _edges(graph.a_con)
    if graph_path.suffix == ".npz":
        arrays = dict(edges=edges, coords=graph.coords, semantic=graph.semantic)
        if graph.a_dist is not None:
            arrays["a_dist"] = graph.a_dist
        np.savez(graph_path, **arrays)
    elif graph_path.suffix == ".csv":
        with graph_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            if graph.a_dist is None:
                w.writerow(["i", "j"])
                w.writerows(edges.tolist())
            else:
                w.writerow(["i", "j", "dist"])
                w.writerows([[i, j, repr(float(graph.a_dist[i, j]))] for i, j in edges])
        np.savetxt(_sidecar(graph_path, "coords"), graph.coords, delimiter=",", fmt="%.17g")
        np.savetxt(_sidecar(graph_path, "semantic"), graph.semantic, delimiter=",", fmt="%.17g")
        if graph.a_dist is not None:
            np.savetxt(_sidecar(graph_path, "dist"), graph.a_dist, delimiter=",", fmt="%.17g")
    else:
        raise ConfigError(f"unsupported graph format {graph_path.suffix!r}")


def _sidecar(graph_path: Path, name: str) -> Path:
    return graph_path.with_name(f"{graph_path.stem}_{name}.csv")


def _load_series(path: Path) -> TrafficSeries:
    if path.suffix == ".npz":
        with np.load(path) as z:
            missing = {"values", "interval_minutes", "calendar"} - set(z.files)
            if missing:
                raise LoadError(f"{path}: missing arrays {sorted(missing)}")
            values = np.asarray(z["values"], dtype=np.float64)
            start = np.datetime64(str(z["start"])) if "start" in z.files else DEFAULT_START
            interval = int(z["interval_minutes"])
            calendar = np.asarray(z["calendar"], dtype=np.int64)
    elif path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise LoadError(f"{path}: empty file")
        header = rows[0]
        if header[0] != "timestamp":
            raise LoadError(f"{path}: malformed header, first column must be 'timestamp'")
        has_holiday = header[-1] == "is_holiday"
        node_cols = header[1:-1] if has_holiday else header[1:]
        for c, name in enumerate(node_cols):
            if name != f"node_{c}":
                raise LoadError(f"{path}: malformed header field {c + 1}: {name!r}")
        stamps, data, holiday = [], [], []
        for r, row in enumerate(rows[1:], start=1):
            if len(row) != len(header):
                raise LoadError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            try:
                stamps.append(np.datetime64(row[0], "m"))
                data.append([float(v) for v in row[1:1 + len(node_cols)]])
            except ValueError as err:
                raise LoadError(f"{path}: row {r}: {err}") from None
            holiday.append(int(row[-1]) if has_holiday else 0)
        values = np.asarray(data, dtype=np.float64)[:, :, None]
        if len(stamps) < 2:
            raise LoadError(f"{path}: need at least two timestamps")
        interval = int((stamps[1] - stamps[0]) / np.timedelta64(1, "m"))
        start = stamps[0]
        calendar = calendar_for(start, len(stamps), interval)
        calendar[:, 2] = holiday
    else:
        raise LoadError(f"{path}: unsupported series format {path.suffix!r}")
    nan = np.argwhere(np.isnan(values))
    if len(nan):
        t, node = int(nan[0][0]), int(nan[0][1])
        raise LoadError(f"{path}: NaN at (t={t}, node={node})")
    return TrafficSeries(values=values, interval_minutes=interval, calendar=calendar, start=start)


def _adjacency_from_edges(edges: np.ndarray, n: int) -> np.ndarray:
    a = np.zeros((n, n))
    if len(edges):
        if edges.min() < 0 or edges.max() >= n:
            raise LoadError(f"edge endpoint outside [0, {n})")
        a[edges[:, 0], edges[:, 1]] = 1
    return a


def _load_graph(path: Path) -> GraphSpec:
    if path.suffix == ".npz":
        with np.load(path) as z:
            missing = {"edges", "coords", "semantic"} - set(z.files)
            if missing:
                raise LoadError(f"{path}: missing arrays {sorted(missing)}")
            coords = np.asarray(z["coords"], dtype=np.float64)
            semantic = np.asarray(z["semantic"], dtype=np.float64)
            edges = np.asarray(z["edges"], dtype=np.int64).reshape(-1, 2)
            a_dist = np.asarray(z["a_dist"], dtype=np.float64) if "a_dist" in z.files else None
    elif path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] not in (["i", "j"], ["i", "j", "dist"]):
            raise LoadError(f"{path}: malformed header, expected 'i,j' or 'i,j,dist'")
        try:
            edges = np.asarray([[int(r[0]), int(r[1])] for r in rows[1:]], dtype=np.int64).reshape(-1, 2)
        except (ValueError, IndexError) as err:
            raise LoadError(f"{path}: bad edge row: {err}") from None
        coords = np.loadtxt(_sidecar(path, "coords"), delimiter=",", ndmin=2)
        semantic = np.loadtxt(_sidecar(path, "semantic"), delimiter=",", ndmin=2)
        dist_path = _sidecar(path, "dist")
        a_dist = np.loadtxt(dist_path, delimiter=",", ndmin=2) if dist_path.exists() else None
        if a_dist is None and len(rows[0]) == 3:
            a_dist = np.zeros((coords.shape[0],) * 2)
            for r in rows[1:]:
                a_dist[int(r[0]), int(r[1])] = float(r[2])
    else:
        raise LoadError(f"{path}: unsupported graph format {path.suffix!r}")
    n = coords.shape[0]
    if semantic.shape[0] != n:
        raise LoadError(f"{path}: semantic has {semantic.shape[0]} rows but coords has {n}")
    return GraphSpec.build(_adjacency_from_edges(edges, n), coords, semantic, a_dist=a_dist)


def load_dataset(series_path, graph_path) -> tuple[TrafficSeries, GraphSpec]:
    series = _load_series(Path(series_path))
    graph = _load_graph(Path(graph_path))
    if series.n_nodes != graph.n_nodes:
        raise LoadError(
            f"dimension mismatch: series has {series.n_nodes} nodes, graph has {graph.n_nodes}")
    return series, graph


@dataclass
class Scaler:
    """Z-score normalization fitted on the training split."""
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        std = float(values.std())
        return cls(mean=float(values.mean()), std=std if std > 0 else 1.0)

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, x):
        return x * self.std + self.mean


def scaled(series: TrafficSeries, scaler: Scaler) -> TrafficSeries:
    return TrafficSeries(values=scaler.transform(series.values), interval_minutes=series.interval_minutes,
                         calendar=series.calendar.copy(), start=series.start)
