"""Dataset ingestion: manifests, per-cell time series, step curves, folds.

The on-disk contract is plain CSV.  ``manifest.csv`` carries one row per
cell with the protocol parameters, cycle life, and outer-loop group:

    cell_id,protocol_id,cc1_a,cc2_a,cv_v,n_ver,temp_c,t_ocv_s,cycle_life,outer_group

and each cell has a ``<cell_id>.csv`` time series:

    time_s,current_a,voltage_v,capacity_ah,energy_wh,temp_c,cycle_index,step_index

A step locator selects one protocol step (by rule or explicit
(cycle_index, step_index) pairs), whose samples are interpolated onto a
1000-point uniform grid to form one row of a curve matrix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateScale, MissingCell, NonMonotoneAbscissa,
                     ParseError, ShapeError, StepNotFound, ValidationError)

GRID_POINTS = 1000

MANIFEST_COLUMNS = ("cell_id", "protocol_id", "cc1_a", "cc2_a", "cv_v",
                    "n_ver", "temp_c", "t_ocv_s", "cycle_life", "outer_group")
SERIES_COLUMNS = ("time_s", "current_a", "voltage_v", "capacity_ah",
                  "energy_wh", "temp_c", "cycle_index", "step_index")

VOLTAGE_SANITY_BAND = (2.5, 4.5)


@dataclass(frozen=True)
class CellManifestEntry:
    cell_id: str
    protocol_id: int
    cc1: float
    cc2: float
    cv: float
    n_ver: int
    temp: float
    t_ocv: float
    cycle_life: int
    outer_group: int

    def validate(self):
        if self.cycle_life <= 0:
            raise ValidationError(f"{self.cell_id}: cycle_life must be positive")
        if not 1 <= self.outer_group <= 5:
            raise ValidationError(f"{self.cell_id}: outer_group {self.outer_group} not in 1..5")
        if not 1 <= self.protocol_id <= 62:
            raise ValidationError(f"{self.cell_id}: protocol_id {self.protocol_id} not in 1..62")


@dataclass
class CellTimeSeries:
    cell_id: str
    time: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    capacity: np.ndarray
    energy: np.ndarray
    temperature: np.ndarray
    cycle_index: np.ndarray
    step_index: np.ndarray

    def __len__(self):
        return self.time.size

    def validate(self):
        if np.any(np.diff(self.time) <= 0):
            raise ValidationError(f"{self.cell_id}: time not strictly increasing")
        lo, hi = VOLTAGE_SANITY_BAND
        if np.any(self.voltage < lo) or np.any(self.voltage > hi):
            raise ValidationError(f"{self.cell_id}: voltage outside [{lo}, {hi}] V")


@dataclass(frozen=True)
class StepSpec:
    """Which protocol step to extract: a rule or explicit index pairs."""

    step: str                                   # 'A' | 'B' | 'C'
    rule: str | None = None                     # first_charge | last_discharge | first_discharge
    pairs: tuple[tuple[int, int], ...] | None = None

    @staticmethod
    def from_json(obj) -> "StepSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        loc = obj.get("locator", {})
        pairs = loc.get("pairs")
        if pairs is not None:
            pairs = tuple((int(c), int(s)) for c, s in pairs)
        return StepSpec(step=obj["step"], rule=loc.get("rule"), pairs=pairs)

    def to_json(self) -> dict:
        loc = {"rule": self.rule} if self.rule else {"pairs": [list(p) for p in self.pairs]}
        return {"step": self.step, "locator": loc}


@dataclass(frozen=True)
class InterpolatedCurve:
    abscissa_kind: str        # voltage | normalized_time | normalized_capacity
    grid: np.ndarray
    ordinate: np.ndarray


@dataclass
class CurveMatrix:
    """n x 1000 stack of interpolated curves plus the regression output."""

    X: np.ndarray
    grid: np.ndarray
    cell_ids: list[str]
    y: np.ndarray
    y_is_log: bool

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != len(self.cell_ids):
            raise ShapeError("rows must align with cell_ids")
        if self.X.shape[1] != self.grid.size:
            raise ShapeError("columns must align with the grid")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise ValidationError("curve matrix contains non-finite values")

    def subset(self, idx) -> "CurveMatrix":
        idx = np.asarray(idx)
        return CurveMatrix(self.X[idx], self.grid,
                           [self.cell_ids[i] for i in idx], self.y[idx], self.y_is_log)


@dataclass(frozen=True)
class StandardizationParams:
    column_means: np.ndarray
    shared_scale: float       # max column-wise standard deviation
    y_mean: float
    y_scale: float


@dataclass(frozen=True)
class FoldPlan:
    """Outer groups from the manifest; inner folds by the mod-5 relabel rule."""

    outer_folds: dict[int, list[int]]                 # group (1..5) -> protocol ids
    inner_fold_of: dict[int, dict[int, int]]          # outer loop -> protocol -> fold 0..4

    @property
    def outer_loops(self) -> list[int]:
        return sorted(self.outer_folds)

    def test_protocols(self, outer_loop: int) -> list[int]:
        return list(self.outer_folds[outer_loop])

    def train_protocols(self, outer_loop: int) -> list[int]:
        return sorted(self.inner_fold_of[outer_loop])

    def inner_splits(self, outer_loop: int):
        """Yield (fold, train_protocols, val_protocols) for folds 0..4."""
        fold_of = self.inner_fold_of[outer_loop]
        for k in range(5):
            val = sorted(pid for pid, f in fold_of.items() if f == k)
            train = sorted(pid for pid, f in fold_of.items() if f != k)
            yield k, train, val


# --- CSV IO -----------------------------------------------------------------

def _read_csv_rows(path: Path, columns):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise MissingCell(f"file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", path=str(path), line=1) from None
        if [h.strip() for h in header] != list(columns):
            raise ParseError(f"{path}: header {header} != expected {list(columns)}",
                             path=str(path), line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ParseError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}",
                                 path=str(path), line=lineno)
            yield lineno, row


def load_manifest(manifest_path) -> list[CellManifestEntry]:
    path = Path(manifest_path)
    entries = []
    for lineno, row in _read_csv_rows(path, MANIFEST_COLUMNS):
        try:
            entry = CellManifestEntry(
                cell_id=row[0].strip(),
                protocol_id=int(row[1]),
                cc1=float(row[2]),
                cc2=float(row[3]),
                cv=float(row[4]),
                n_ver=int(row[5]),
                temp=float(row[6]),
                t_ocv=float(row[7]),
                cycle_life=int(row[8]),
                outer_group=int(row[9]),
            )
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}", path=str(path), line=lineno) from None
        entry.validate()
        entries.append(entry)
    if not entries:
        raise ValidationError(f"{path}: manifest has no rows")
    return entries


def read_series(path, cell_id: str) -> CellTimeSeries:
    cols = [[] for _ in SERIES_COLUMNS]
    for lineno, row in _read_csv_rows(Path(path), SERIES_COLUMNS):
        try:
            for c, val in zip(cols, row):
                c.append(float(val))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}", path=str(path), line=lineno) from None
    arrays = [np.asarray(c, dtype=float) for c in cols]
    series = CellTimeSeries(cell_id, *arrays)
    if len(series) == 0:
        raise ValidationError(f"{cell_id}: time series has no samples")
    series.validate()
    return series


def write_series(series: CellTimeSeries, path):
    """Inverse of read_series; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_COLUMNS)
        fields = (series.time, series.current, series.voltage, series.capacity,
                  series.energy, series.temperature, series.cycle_index, series.step_index)
        for vals in zip(*fields):
            writer.writerow([repr(float(v)) for v in vals])


def load_dataset(manifest_path, data_dir):
    """Load the manifest and one time-series file per cell."""
    entries = load_manifest(manifest_path)
    data_dir = Path(data_dir)
    series = []
    for entry in entries:
        cell_path = data_dir / f"{entry.cell_id}.csv"
        if not cell_path.exists():
            raise MissingCell(f"{entry.cell_id}: no time series at {cell_path}")
        series.append(read_series(cell_path, entry.cell_id))
    return entries, series


# --- step extraction and interpolation ---------------------------------------

def _step_runs(series: CellTimeSeries):
    """Contiguous runs of constant (cycle_index, step_index), in time order."""
    keys = np.stack([series.cycle_index, series.step_index], axis=1)
    change = np.any(np.diff(keys, axis=0) != 0, axis=1)
    bounds = np.concatenate([[0], np.flatnonzero(change) + 1, [len(series)]])
    return [(int(keys[s, 0]), int(keys[s, 1]), s, e)
            for s, e in zip(bounds[:-1], bounds[1:])]


def resolve_step(series: CellTimeSeries, spec: StepSpec) -> slice:
    """Map a StepSpec to a contiguous sample slice."""
    runs = _step_runs(series)
    if spec.pairs is not None:
        chosen = [r for r in runs if (r[0], r[1]) in set(spec.pairs)]
        if not chosen:
            raise StepNotFound(f"{series.cell_id}: no samples for pairs {spec.pairs}")
        starts = [r[2] for r in chosen]
        ends = [r[3] for r in chosen]
        sel = slice(min(starts), max(ends))
        span = sum(e - s for _, _, s, e in chosen)
        if span != sel.stop - sel.start:
            raise StepNotFound(f"{series.cell_id}: pairs {spec.pairs} are not contiguous")
        return sel
    mean_i = [float(np.mean(series.current[s:e])) for _, _, s, e in runs]
    if spec.rule == "first_charge":
        cands = [r for r, mi in zip(runs, mean_i) if mi > 0]
        pick = cands[0] if cands else None
    elif spec.rule == "first_discharge":
        cands = [r for r, mi in zip(runs, mean_i) if mi < 0]
        pick = cands[0] if cands else None
    elif spec.rule == "last_discharge":
        cands = [r for r, mi in zip(runs, mean_i) if mi < 0]
        pick = cands[-1] if cands else None
    else:
        raise ValidationError(f"unknown step rule: {spec.rule!r}")
    if pick is None:
        raise StepNotFound(f"{series.cell_id}: rule {spec.rule!r} matched no step")
    return slice(pick[2], pick[3])


DEFAULT_ORDINATE = {"voltage": "capacity", "normalized_time": "voltage",
                    "normalized_capacity": "voltage"}


def _monotone_keep_last(x, ordinate, tol):
    """Enforce a strictly increasing abscissa, keeping the last sample of any
    plateau (the settled value of a hold)."""
    dx = np.diff(x)
    if np.any(dx < -tol):
        raise NonMonotoneAbscissa("abscissa reverses beyond tolerance")
    # keep sample i iff x[i] is strictly below every later sample
    suffix_min = np.minimum.accumulate(x[::-1])[::-1]
    keep = np.empty(x.size, dtype=bool)
    keep[-1] = True
    keep[:-1] = x[:-1] < suffix_min[1:]
    return x[keep], ordinate[keep]


def extract_step_curve(series: CellTimeSeries, spec: StepSpec, abscissa_kind: str,
                       grid_range, ordinate_kind: str | None = None,
                       n_points: int = GRID_POINTS, monotone_tol: float = 1e-9) -> InterpolatedCurve:
    """Interpolate one protocol step onto a uniform grid.

    Linear interpolation over ``grid_range``; values outside the sampled
    abscissa range take the nearest endpoint value.
    """
    sel = resolve_step(series, spec)
    if sel.stop - sel.start < 2:
        raise StepNotFound(f"{series.cell_id}: step has fewer than 2 samples")
    ordinate_kind = ordinate_kind or DEFAULT_ORDINATE[abscissa_kind]

    t = series.time[sel]
    fields = {"capacity": series.capacity[sel], "voltage": series.voltage[sel],
              "time": t - t[0], "energy": series.energy[sel]}
    if ordinate_kind not in fields:
        raise ValidationError(f"unknown ordinate kind: {ordinate_kind!r}")
    ordinate = fields[ordinate_kind]

    if abscissa_kind == "voltage":
        x = series.voltage[sel]
    elif abscissa_kind == "normalized_time":
        x = (t - t[0]) / (t[-1] - t[0])
    elif abscissa_kind == "normalized_capacity":
        q = series.capacity[sel]
        if q[-1] == q[0]:
            raise NonMonotoneAbscissa(f"{series.cell_id}: capacity span is zero")
        x = (q - q[0]) / (q[-1] - q[0])
    else:
        raise ValidationError(f"unknown abscissa kind: {abscissa_kind!r}")

    direction = 1.0 if x[-1] >= x[0] else -1.0
    z = x * direction
    try:
        z_kept, ord_kept = _monotone_keep_last(z, ordinate, monotone_tol)
    except NonMonotoneAbscissa:
        raise NonMonotoneAbscissa(
            f"{series.cell_id}: {abscissa_kind} not monotone within step {spec.step}") from None
    if z_kept.size < 2:
        raise NonMonotoneAbscissa(f"{series.cell_id}: fewer than 2 distinct abscissa values")

    lo, hi = float(grid_range[0]), float(grid_range[1])
    grid = np.linspace(lo, hi, n_points)
    values = np.interp(grid * direction, z_kept, ord_kept)
    return InterpolatedCurve(abscissa_kind, grid, values)


def build_curve_matrix(entries, series, spec: StepSpec, abscissa_kind: str,
                       grid_range, log_output: bool = True,
                       ordinate_kind: str | None = None,
                       n_points: int = GRID_POINTS) -> CurveMatrix:
    """Stack per-cell interpolated step curves in manifest order."""
    by_id = {s.cell_id: s for s in series}
    rows, y = [], []
    grid = None
    for entry in entries:
        if entry.cell_id not in by_id:
            raise MissingCell(f"no series loaded for {entry.cell_id}")
        curve = extract_step_curve(by_id[entry.cell_id], spec, abscissa_kind,
                                   grid_range, ordinate_kind, n_points)
        rows.append(curve.ordinate)
        grid = curve.grid
        y.append(np.log(entry.cycle_life) if log_output else float(entry.cycle_life))
    return CurveMatrix(np.vstack(rows), grid, [e.cell_id for e in entries],
                       np.asarray(y, dtype=float), log_output)


# --- standardization ----------------------------------------------------------

def standardize(matrix: CurveMatrix, params: StandardizationParams | None = None):
    """Center columns and divide by the shared (max column std) scale.

    Training mode (``params`` is None) computes the parameters from the
    matrix; test mode applies the supplied training parameters unchanged.
    Returns (X_std, y_std, params).
    """
    if params is None:
        means = matrix.X.mean(axis=0)
        scale = float(matrix.X.std(axis=0).max())
        if scale == 0.0:
            raise DegenerateScale("all columns are constant")
        y_mean = float(matrix.y.mean())
        y_scale = float(matrix.y.std())
        if y_scale == 0.0:
            raise DegenerateScale("output is constant")
        params = StandardizationParams(means, scale, y_mean, y_scale)
    X_std = (matrix.X - params.column_means) / params.shared_scale
    y_std = (matrix.y - params.y_mean) / params.y_scale
    return X_std, y_std, params


def destandardize(X_std, y_std, params: StandardizationParams):
    return (X_std * params.shared_scale + params.column_means,
            y_std * params.y_scale + params.y_mean)


# --- fold assignment ----------------------------------------------------------

def assign_folds(entries) -> FoldPlan:
    """Outer folds from the manifest groups; inner folds within each outer
    training set by relabeling its protocols 1..m in ascending id and taking
    the label mod 5.  Replicate cells of a protocol always share folds."""
    group_of: dict[int, int] = {}
    for e in entries:
        prev = group_of.get(e.protocol_id)
        if prev is None:
            group_of[e.protocol_id] = e.outer_group
        elif prev != e.outer_group:
            raise ValidationError(
                f"protocol {e.protocol_id} has conflicting outer groups {prev} and {e.outer_group}")
    outer_folds: dict[int, list[int]] = {}
    for pid in sorted(group_of):
        outer_folds.setdefault(group_of[pid], []).append(pid)
    inner: dict[int, dict[int, int]] = {}
    for loop in sorted(outer_folds):
        train = [pid for pid in sorted(group_of) if group_of[pid] != loop]
        inner[loop] = {pid: (label % 5) for label, pid in enumerate(train, start=1)}
    return FoldPlan(outer_folds, inner)


# --- synthetic adapter --------------------------------------------------------

SIM_COLUMNS = ("time_s", "voltage_v", "q_norm", "c_mean_cathode", "c_mean_anode")


def read_sim_csv(path):
    """Read a simulator discharge trace (see physics.write_sim_csv)."""
    cols = [[] for _ in SIM_COLUMNS]
    for lineno, row in _read_csv_rows(Path(path), SIM_COLUMNS):
        try:
            for c, val in zip(cols, row):
                c.append(float(val))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}", path=str(path), line=lineno) from None
    return tuple(np.asarray(c, dtype=float) for c in cols)


def series_from_simulation(cell_id: str, time_s, voltage_v, q_norm,
                           nominal_capacity_ah: float, temp_c: float) -> CellTimeSeries:
    """Wrap a simulated discharge trace as a one-step cell time series.

    The trace becomes a single discharge step (negative current), so the
    ``last_discharge`` locator resolves to the whole record.
    """
    time_s = np.asarray(time_s, dtype=float)
    voltage = np.asarray(voltage_v, dtype=float)
    q = np.asarray(q_norm, dtype=float) * nominal_capacity_ah
    dt = np.gradient(time_s)
    dq = np.gradient(q)
    current = -np.divide(dq, dt / 3600.0, out=np.zeros_like(dq), where=dt > 0)
    energy = np.concatenate([[0.0], np.cumsum(0.5 * (voltage[1:] + voltage[:-1]) * np.diff(q))])
    n = time_s.size
    return CellTimeSeries(cell_id, time_s, current, voltage, q, energy,
                          np.full(n, temp_c), np.zeros(n), np.zeros(n))
