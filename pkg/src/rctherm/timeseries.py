"""Thermostat trace ingestion, imputation, and regression-matrix assembly.

Traces live on a uniform 300 s grid. Missing values are explicit (NaN for
continuous fields, -1 for the HVAC mode) until :func:`impute` fills them.
All temperatures stay in degrees Fahrenheit, the native unit of the data.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import (
    DuplicateTimestampError,
    InsufficientDataError,
    OrderingError,
    ParseError,
    UnimputableError,
)

STEP_SECONDS = 300
SAMPLES_PER_DAY = 86400 // STEP_SECONDS  # 288
#: A lag window overlapping an imputed run longer than this many steps is
#: dropped from regression matrices (30 minutes of fabricated dynamics).
MAX_GAP_STEPS = 6

MODE_OFF, MODE_HEAT, MODE_COOL, MODE_AUTO = 0, 1, 2, 3
MODE_MISSING = -1
_MODE_NAMES = {"off": MODE_OFF, "heat": MODE_HEAT, "cool": MODE_COOL, "auto": MODE_AUTO}
_MODE_STRINGS = {v: k for k, v in _MODE_NAMES.items()}

CSV_HEADER = [
    "timestamp",
    "t_in",
    "t_out",
    "t_setheat",
    "t_setcool",
    "hvac_mode",
    "motion",
    "humidity",
]

_CONTINUOUS_FIELDS = ("t_in", "t_out", "t_setheat", "t_setcool", "humidity")


@dataclass(frozen=True, eq=False)
class Trace:
    """A single home's uniformly sampled thermostat time series.

    ``long_gap`` marks samples inside an imputed run longer than
    ``MAX_GAP_STEPS``; it is populated by :func:`impute` and consumed by
    :func:`build_regression`.
    """

    home_id: str
    start: datetime
    t_in: np.ndarray
    t_out: np.ndarray
    t_setheat: np.ndarray
    t_setcool: np.ndarray
    hvac_mode: np.ndarray
    motion: np.ndarray
    humidity: np.ndarray
    step: int = STEP_SECONDS
    long_gap: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t_in)
        if n < 2:
            raise InsufficientDataError("trace must contain at least 2 samples")
        for name in ("t_out", "t_setheat", "t_setcool", "hvac_mode", "motion", "humidity"):
            if len(getattr(self, name)) != n:
                raise ParseError(f"field {name} length differs from t_in")
        if self.step != STEP_SECONDS:
            raise ParseError(f"trace step must be {STEP_SECONDS} s, got {self.step}")

    def __len__(self):
        return len(self.t_in)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        if (self.home_id, self.start, self.step) != (other.home_id, other.start, other.step):
            return False
        for name in _CONTINUOUS_FIELDS + ("motion",):
            if not np.array_equal(getattr(self, name), getattr(other, name), equal_nan=True):
                return False
        if not np.array_equal(self.hvac_mode, other.hvac_mode):
            return False
        a, b = self.long_gap, other.long_gap
        if (a is None) != (b is None):
            return False
        return a is None or np.array_equal(a, b)

    @property
    def has_missing(self):
        if any(np.isnan(getattr(self, f)).any() for f in _CONTINUOUS_FIELDS):
            return True
        return bool((self.hvac_mode == MODE_MISSING).any() or np.isnan(self.motion).any())


@dataclass(frozen=True)
class ControlSeries:
    """Binary heating/cooling activity derived from setpoints and mode.

    ``conflict`` flags samples where inverted setpoints made both rules fire;
    heating wins there and k_cool is forced to zero.
    """

    k_heat: np.ndarray
    k_cool: np.ndarray
    conflict: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.k_heat) != len(self.k_cool):
            raise ParseError("k_heat and k_cool lengths differ")
        if self.conflict is None:
            object.__setattr__(self, "conflict", np.zeros(len(self.k_heat), dtype=bool))

    def __len__(self):
        return len(self.k_heat)


@dataclass(frozen=True)
class RegressionDataset:
    """Lagged input/target matrix for an order-n difference-equation model.

    Row layout (width 4n+3): ``u_t, u_{t-1}, ..., u_{t-n}, y_{t-1}, ..., y_{t-n}``
    with ``u = (t_out, k_heat, k_cool)``; target is ``y_t = t_in`` at ``t``.
    ``indices`` records the grid index of each row's target.
    """

    order: int
    inputs: np.ndarray
    targets: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 4 * self.order + 3:
            raise ParseError(f"inputs must be (rows, {4 * self.order + 3})")
        if len(self.targets) != len(self.inputs) or len(self.indices) != len(self.inputs):
            raise ParseError("inputs, targets, and indices lengths differ")

    def __len__(self):
        return len(self.targets)


def _parse_timestamp(text, line):
    raw = text.strip()
    if raw.endswith("Z") or raw.endswith("z"):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ParseError(f"bad timestamp {text!r}: {exc}", line) from None
    if ts.tzinfo is None:
        raise ParseError(f"timestamp {text!r} lacks a UTC offset", line)
    return ts.astimezone(timezone.utc)


def _parse_float(text, name, line, lo=None, hi=None):
    raw = text.strip()
    if raw == "":
        return np.nan
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"bad {name} value {text!r}", line) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite {name} value {text!r}", line)
    if lo is not None and not (lo <= value <= hi):
        raise ParseError(f"{name} value {value} outside [{lo}, {hi}]", line)
    return value


def ingest_trace(source, home_id):
    """Read a trace CSV (see CSV_HEADER) onto the uniform 300 s grid.

    ``source`` is a path or a text file-like object. Rows missing from the
    grid are inserted as marked-missing samples. Raises ParseError,
    OrderingError, or DuplicateTimestampError on malformed input.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            return ingest_trace(fh, home_id)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV stream", 1) from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise ParseError(f"unexpected header {header!r}", 1)

    times, rows = [], []
    for line, row in enumerate(reader, start=2):
        if not row or all(f.strip() == "" for f in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line)
        ts = _parse_timestamp(row[0], line)
        mode_raw = row[5].strip()
        if mode_raw == "":
            mode = MODE_MISSING
        elif mode_raw in _MODE_NAMES:
            mode = _MODE_NAMES[mode_raw]
        else:
            raise ParseError(f"unknown hvac_mode {mode_raw!r}", line)
        motion_raw = row[6].strip()
        if motion_raw == "":
            motion = np.nan
        elif motion_raw in ("0", "1"):
            motion = float(motion_raw)
        else:
            raise ParseError(f"motion must be 0 or 1, got {motion_raw!r}", line)
        rec = (
            _parse_float(row[1], "t_in", line),
            _parse_float(row[2], "t_out", line),
            _parse_float(row[3], "t_setheat", line),
            _parse_float(row[4], "t_setcool", line),
            mode,
            motion,
            _parse_float(row[7], "humidity", line, lo=0.0, hi=1.0),
        )
        if times:
            if ts == times[-1][0]:
                raise DuplicateTimestampError(f"line {line}: duplicate timestamp {row[0]}")
            if ts < times[-1][0]:
                raise OrderingError(f"line {line}: timestamp {row[0]} not increasing")
        times.append((ts, line))
        rows.append(rec)

    if len(rows) < 2:
        raise InsufficientDataError("trace CSV must contain at least 2 data rows")

    start = times[0][0]
    span = (times[-1][0] - start).total_seconds()
    n = int(span // STEP_SECONDS) + 1
    arrays = {
        "t_in": np.full(n, np.nan),
        "t_out": np.full(n, np.nan),
        "t_setheat": np.full(n, np.nan),
        "t_setcool": np.full(n, np.nan),
        "motion": np.full(n, np.nan),
        "humidity": np.full(n, np.nan),
    }
    mode = np.full(n, MODE_MISSING, dtype=np.int8)
    for (ts, line), rec in zip(times, rows):
        offset = (ts - start).total_seconds()
        idx, rem = divmod(offset, STEP_SECONDS)
        if rem != 0:
            raise ParseError(f"timestamp {ts.isoformat()} not on the 5-minute grid", line)
        i = int(idx)
        (arrays["t_in"][i], arrays["t_out"][i], arrays["t_setheat"][i],
         arrays["t_setcool"][i], mode[i], arrays["motion"][i],
         arrays["humidity"][i]) = rec

    return Trace(home_id=home_id, start=start, hvac_mode=mode, **arrays)


def write_trace_csv(trace, sink):
    """Serialize a trace back to CSV; round-trips decimal fields bit-exactly."""
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "w", newline="") as fh:
            write_trace_csv(trace, fh)
            return
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i in range(len(trace)):
        ts = trace.start + timedelta(seconds=i * trace.step)
        mode = trace.hvac_mode[i]
        motion = trace.motion[i]
        writer.writerow([
            ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
            _fmt(trace.t_in[i]),
            _fmt(trace.t_out[i]),
            _fmt(trace.t_setheat[i]),
            _fmt(trace.t_setcool[i]),
            "" if mode == MODE_MISSING else _MODE_STRINGS[int(mode)],
            "" if np.isnan(motion) else str(int(motion)),
            _fmt(trace.humidity[i]),
        ])


def _fmt(value):
    return "" if np.isnan(value) else repr(float(value))


def trace_to_csv_text(trace):
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


def _interp_field(values, name):
    present = ~np.isnan(values)
    if not present.any():
        raise UnimputableError(f"field {name} is entirely missing")
    if present.all():
        return values.copy()
    idx = np.arange(len(values), dtype=float)
    # np.interp holds edge values constant outside the observed range.
    return np.interp(idx, idx[present], values[present])


def _long_gap_mask(missing):
    """Samples inside any missing run longer than MAX_GAP_STEPS."""
    mask = np.zeros(len(missing), dtype=bool)
    i = 0
    n = len(missing)
    while i < n:
        if missing[i]:
            j = i
            while j < n and missing[j]:
                j += 1
            if j - i > MAX_GAP_STEPS:
                mask[i:j] = True
            i = j
        else:
            i += 1
    return mask


def impute(trace):
    """Fill missing samples: linear interpolation for continuous fields,
    zero-fill for motion, last-observation-carried-forward for hvac_mode.

    Idempotent: a trace without missing markers is returned unchanged
    (modulo a populated ``long_gap`` mask).
    """
    if not trace.has_missing:
        if trace.long_gap is not None:
            return trace
        return replace(trace, long_gap=np.zeros(len(trace), dtype=bool))

    model_missing = (trace.hvac_mode == MODE_MISSING)
    for name in ("t_in", "t_out", "t_setheat", "t_setcool"):
        model_missing = model_missing | np.isnan(getattr(trace, name))

    filled = {name: _interp_field(getattr(trace, name), name) for name in _CONTINUOUS_FIELDS}

    motion = trace.motion.copy()
    motion[np.isnan(motion)] = 0.0

    mode = trace.hvac_mode.copy()
    present = np.flatnonzero(mode != MODE_MISSING)
    if len(present) == 0:
        mode[:] = MODE_OFF  # no observation to carry; assume HVAC off
    else:
        # LOCF; leading gap backfilled from the first observation.
        carried = mode[present[0]]
        for i in range(len(mode)):
            if mode[i] == MODE_MISSING:
                mode[i] = carried
            else:
                carried = mode[i]

    return replace(
        trace,
        hvac_mode=mode,
        motion=motion,
        long_gap=_long_gap_mask(model_missing),
        **filled,
    )


def derive_controls(trace):
    """Binary k_heat/k_cool per the setpoint-and-mode rules.

    Requires an imputed trace. If inverted setpoints make both rules fire at
    a sample, heating wins and the sample is flagged in ``conflict``.
    """
    if trace.has_missing:
        raise UnimputableError("derive_controls requires an imputed trace")
    mode = trace.hvac_mode
    heat_able = (mode == MODE_AUTO) | (mode == MODE_HEAT)
    cool_able = (mode == MODE_AUTO) | (mode == MODE_COOL)
    k_heat = ((trace.t_in < trace.t_setheat) & heat_able).astype(np.int8)
    k_cool = ((trace.t_in > trace.t_setcool) & cool_able).astype(np.int8)
    conflict = (k_heat == 1) & (k_cool == 1)
    k_cool[conflict] = 0
    return ControlSeries(k_heat=k_heat, k_cool=k_cool, conflict=conflict)


def build_regression(trace, controls, order):
    """Assemble the lagged design matrix for an order-n model.

    One row per time index t in [order, len); rows whose lag window
    [t-order, t] overlaps a long imputation gap are dropped.
    """
    n = int(order)
    if n < 1:
        raise ParseError("order must be >= 1")
    if len(trace) <= n + 1:
        raise InsufficientDataError(f"trace length {len(trace)} too short for order {n}")
    if len(controls) != len(trace):
        raise ParseError("controls length differs from trace length")

    u = np.column_stack([
        trace.t_out,
        controls.k_heat.astype(float),
        controls.k_cool.astype(float),
    ])
    y = trace.t_in
    m = len(trace) - n
    cols = [u[n - i: len(trace) - i] for i in range(n + 1)]  # u_t .. u_{t-n}
    cols += [y[n - i: len(trace) - i, None] for i in range(1, n + 1)]  # y_{t-1} .. y_{t-n}
    inputs = np.hstack(cols)
    targets = y[n:].copy()
    indices = np.arange(n, len(trace))

    if trace.long_gap is not None and trace.long_gap.any():
        bad = np.convolve(trace.long_gap.astype(int), np.ones(n + 1, dtype=int))[n: len(trace)] > 0
        keep = ~bad
        inputs, targets, indices = inputs[keep], targets[keep], indices[keep]

    return RegressionDataset(order=n, inputs=inputs, targets=targets, indices=indices)


def split(trace, train_days, test_days):
    """Contiguous chronological split into (train, test) sub-traces."""
    need = (train_days + test_days) * SAMPLES_PER_DAY
    if len(trace) < need:
        raise InsufficientDataError(
            f"trace has {len(trace)} samples, need {need} for a "
            f"{train_days}+{test_days} day split"
        )
    cut = train_days * SAMPLES_PER_DAY
    end = cut + test_days * SAMPLES_PER_DAY
    return slice_trace(trace, 0, cut), slice_trace(trace, cut, end)


def slice_trace(trace, lo, hi):
    """Sub-trace over grid indices [lo, hi); start shifts accordingly."""
    fields = {name: getattr(trace, name)[lo:hi].copy()
              for name in _CONTINUOUS_FIELDS + ("motion", "hvac_mode")}
    gap = None if trace.long_gap is None else trace.long_gap[lo:hi].copy()
    return Trace(
        home_id=trace.home_id,
        start=trace.start + timedelta(seconds=lo * trace.step),
        long_gap=gap,
        **fields,
    )
