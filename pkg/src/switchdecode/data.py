"""Domain types and file I/O for multichannel time series and results.

All series are time-major: row ``t`` holds one sample across channels.
Two on-disk formats are supported, CSV (header row of channel names, one
row per sample, 9 significant digits) and raw-f32 (little-endian IEEE-754
binary32, row-major, described by a JSON sidecar ``<path>.meta.json``).
Internal computation is always float64; raw-f32 is a storage format only.

All types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import (
    as_float_matrix,
    check_finite,
    check_positive,
    check_probability,
    readonly,
)

PROB_TOL = 1e-12


@dataclass(frozen=True)
class MultichannelSeries:
    """A (T, C) real-valued series sampled at ``fs_hz``.

    Rows are time samples, columns are channels. Entries must be finite.
    Carries EEG or speech envelopes alike; a single-channel envelope is a
    (T, 1) series.
    """

    data: np.ndarray
    fs_hz: float
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        arr = as_float_matrix(self.data, "series data")
        object.__setattr__(self, "data", readonly(arr))
        object.__setattr__(self, "fs_hz", check_positive(self.fs_hz, "fs_hz"))
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != arr.shape[1]:
                raise ValueError(
                    f"got {len(labels)} labels for {arr.shape[1]} channels"
                )
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def channel(self, c: int = 0) -> np.ndarray:
        """Column ``c`` as a 1-D view."""
        return self.data[:, c]

    def zscored(self) -> "MultichannelSeries":
        """Per-channel z-scoring over the whole recording.

        A channel with variance below 1e-24 is only mean-centered.
        """
        mean = self.data.mean(axis=0)
        std = self.data.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return MultichannelSeries((self.data - mean) / std, self.fs_hz, self.labels)


@dataclass(frozen=True)
class StateSequence:
    """A length-T sequence of attention states, each 1 or 2."""

    states: np.ndarray
    fs_hz: float

    def __post_init__(self):
        arr = np.asarray(self.states)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("states must be a non-empty 1-D sequence")
        arr = arr.astype(np.int64)
        bad = np.flatnonzero((arr != 1) & (arr != 2))
        if bad.size:
            raise ValueError(f"state at index {bad[0]} is not in {{1, 2}}")
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)
        object.__setattr__(self, "fs_hz", check_positive(self.fs_hz, "fs_hz"))

    def __len__(self) -> int:
        return self.states.size

    def flipped(self) -> "StateSequence":
        """The same sequence with labels 1 and 2 exchanged."""
        return StateSequence(3 - self.states, self.fs_hz)


@dataclass(frozen=True)
class TransitionModel:
    """Symmetric two-state Markov chain with shared self-transition probability.

    The implied transition matrix is ``[[p_stay, 1-p_stay], [1-p_stay,
    p_stay]]``, so each row sums to 1 by construction. ``initial`` is the
    distribution of the first state, uniform unless prior knowledge says
    otherwise. ``p_stay`` may sit on the closed interval ends (0 or 1) to
    allow degenerate chains in simulation.
    """

    p_stay: float
    initial: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))

    def __post_init__(self):
        object.__setattr__(
            self, "p_stay", check_probability(self.p_stay, "p_stay", inclusive=True)
        )
        init = np.asarray(self.initial, dtype=np.float64)
        if init.shape != (2,):
            raise ValueError(f"initial must have shape (2,), got {init.shape}")
        if np.any(init < 0):
            raise ValueError("initial probabilities must be non-negative")
        if abs(init.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"initial must sum to 1, got {init.sum()!r}")
        object.__setattr__(self, "initial", readonly(init))

    @property
    def matrix(self) -> np.ndarray:
        p = self.p_stay
        return np.array([[p, 1.0 - p], [1.0 - p, p]])


@dataclass(frozen=True)
class MsmParams:
    """Parameters of the two-state switching regression.

    ``beta1``/``beta2`` map the lagged design row to the envelope
    difference under state 1/2; ``sigma2_1``/``sigma2_2`` are the
    corresponding noise variances. The transition model is carried along
    but is a fixed hyperparameter, not an estimated quantity, unless
    re-estimation is explicitly requested.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    sigma2_1: float
    sigma2_2: float
    transition: TransitionModel

    def __post_init__(self):
        b1 = np.asarray(self.beta1, dtype=np.float64)
        b2 = np.asarray(self.beta2, dtype=np.float64)
        if b1.ndim != 1 or b2.ndim != 1:
            raise ValueError("beta1 and beta2 must be 1-D vectors")
        if b1.shape != b2.shape:
            raise ValueError(
                f"beta1 and beta2 must have equal length, got {b1.size} and {b2.size}"
            )
        check_finite(b1, "beta1")
        check_finite(b2, "beta2")
        object.__setattr__(self, "beta1", readonly(b1))
        object.__setattr__(self, "beta2", readonly(b2))
        object.__setattr__(self, "sigma2_1", check_positive(self.sigma2_1, "sigma2_1"))
        object.__setattr__(self, "sigma2_2", check_positive(self.sigma2_2, "sigma2_2"))
        if not isinstance(self.transition, TransitionModel):
            raise TypeError("transition must be a TransitionModel")

    @property
    def n_features(self) -> int:
        return self.beta1.size

    def swapped(self) -> "MsmParams":
        """Parameters under the opposite state labelling."""
        return MsmParams(
            self.beta2, self.beta1, self.sigma2_2, self.sigma2_1, self.transition
        )


@dataclass(frozen=True)
class PosteriorSequence:
    """Per-sample two-state posteriors plus total observed-data log-likelihood.

    ``filtered[t]`` conditions on observations up to t, ``smoothed[t]``
    (when present) on the whole recording. Rows are probability vectors
    summing to 1 within 1e-12.
    """

    filtered: np.ndarray
    smoothed: np.ndarray | None
    loglik: float

    def __post_init__(self):
        filt = self._check_rows(self.filtered, "filtered")
        object.__setattr__(self, "filtered", filt)
        if self.smoothed is not None:
            smo = self._check_rows(self.smoothed, "smoothed")
            if smo.shape != filt.shape:
                raise ValueError("smoothed and filtered must have the same shape")
            object.__setattr__(self, "smoothed", smo)
        loglik = float(self.loglik)
        if not math.isfinite(loglik):
            raise ValueError(f"loglik must be finite, got {loglik}")
        object.__setattr__(self, "loglik", loglik)

    @staticmethod
    def _check_rows(arr, name: str) -> np.ndarray:
        arr = as_float_matrix(arr, name)
        if arr.shape[1] != 2:
            raise ValueError(f"{name} must have two columns, got {arr.shape[1]}")
        if np.any(arr < -PROB_TOL) or np.any(arr > 1.0 + PROB_TOL):
            raise ValueError(f"{name} entries must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(arr.sum(axis=1) - 1.0) > PROB_TOL)
        if bad.size:
            raise ValueError(f"{name} row {bad[0]} does not sum to 1")
        return readonly(arr)

    @property
    def n_samples(self) -> int:
        return self.filtered.shape[0]

    def column_swapped(self) -> "PosteriorSequence":
        """The same posteriors under the opposite state labelling."""
        smoothed = None if self.smoothed is None else self.smoothed[:, ::-1]
        return PosteriorSequence(self.filtered[:, ::-1], smoothed, self.loglik)


def split_envelope_pair(y, fs_hz: float, n_samples: int):
    """Coerce a (T, 2) array or a pair of series into two single-channel series."""
    if isinstance(y, (tuple, list)) and len(y) == 2:
        first, second = y
        if isinstance(first, MultichannelSeries):
            return first, second
        y = np.column_stack([np.asarray(first), np.asarray(second)])
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("y must hold exactly two envelope columns")
    if arr.shape[0] != n_samples:
        raise ValueError(f"envelopes have {arr.shape[0]} samples, EEG has {n_samples}")
    return (
        MultichannelSeries(arr[:, :1], fs_hz),
        MultichannelSeries(arr[:, 1:], fs_hz),
    )


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_CSV_FMT = "%.9g"


def load_series(path, fmt: str = "csv", fs_hz: float | None = None) -> MultichannelSeries:
    """Load a MultichannelSeries from ``path``.

    fmt="csv" parses a mandatory header row of channel names followed by
    one row per sample; ``fs_hz`` must be supplied by the caller. fmt=
    "raw-f32" reads little-endian binary32 values, row-major, with shape
    and rate taken from the JSON sidecar ``<path>.meta.json``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if fmt == "csv":
        if fs_hz is None:
            raise ValueError("fs_hz is required when loading CSV series")
        return _load_csv(path, float(fs_hz))
    if fmt == "raw-f32":
        return _load_raw_f32(path)
    raise ValueError(f"unknown series format {fmt!r}")


def save_series(series: MultichannelSeries, path, fmt: str = "csv") -> None:
    """Write ``series`` to ``path`` in the given format.

    CSV keeps 9 significant digits; raw-f32 stores binary32, so values
    that are not exactly representable in single precision are rounded.
    """
    path = Path(path)
    if fmt == "csv":
        labels = series.labels or tuple(f"ch{i}" for i in range(series.n_channels))
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(labels) + "\n")
            for row in series.data:
                fh.write(",".join(_CSV_FMT % v for v in row) + "\n")
    elif fmt == "raw-f32":
        series.data.astype("<f4").tofile(path)
        meta = {
            "rows": series.n_samples,
            "cols": series.n_channels,
            "fs_hz": series.fs_hz,
        }
        if series.labels is not None:
            meta["labels"] = list(series.labels)
        _write_json(meta, Path(str(path) + ".meta.json"))
    else:
        raise ValueError(f"unknown series format {fmt!r}")


def _load_csv(path: Path, fs_hz: float) -> MultichannelSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV, expected a header row") from None
        labels = tuple(h.strip() for h in header)
        rows = []
        for i, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(labels):
                raise ValueError(
                    f"{path}: row {i} has {len(row)} fields, header has {len(labels)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: unparseable number in row {i}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    _reject_nonfinite(data, path)
    return MultichannelSeries(data, fs_hz, labels)


def _load_raw_f32(path: Path) -> MultichannelSeries:
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing sidecar for raw-f32 series: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    for key in ("rows", "cols", "fs_hz"):
        if key not in meta:
            raise ValueError(f"{meta_path}: missing field {key!r}")
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if rows < 1 or cols < 1:
        raise ValueError(f"{meta_path}: rows and cols must be >= 1")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != rows * cols:
        raise ValueError(
            f"{path}: byte count mismatch, sidecar implies {rows * cols * 4} bytes "
            f"({rows}x{cols} float32) but file holds {raw.size * 4}"
        )
    data = raw.astype(np.float64).reshape(rows, cols)
    _reject_nonfinite(data, path)
    labels = tuple(meta["labels"]) if "labels" in meta and meta["labels"] else None
    return MultichannelSeries(data, float(meta["fs_hz"]), labels)


def _reject_nonfinite(data: np.ndarray, path: Path) -> None:
    if np.all(np.isfinite(data)):
        return
    r, c = np.unravel_index(int(np.argmin(np.isfinite(data))), data.shape)
    raise ValueError(f"{path}: non-finite value at row {r}, column {c}")


def load_states(path, fs_hz: float) -> StateSequence:
    """Read a decoded/true state CSV (header ``state``, one 1/2 per row)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "state" not in [h.strip() for h in header]:
            raise ValueError(f"{path}: expected a header row containing 'state'")
        col = [h.strip() for h in header].index("state")
        states = [int(float(row[col])) for row in reader if row]
    return StateSequence(np.asarray(states), fs_hz)


def save_states(states: StateSequence, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("state\n")
        for s in states.states:
            fh.write(f"{int(s)}\n")


def save_report(report, path) -> None:
    """Write an evaluation report as JSON with a fixed key order.

    Rejects non-finite numeric fields before touching the file.
    """
    doc = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    for key in ("accuracy", "mean_switch_time_s"):
        if not math.isfinite(float(doc[key])):
            raise ValueError(f"report field {key!r} is not finite")
    for i, v in enumerate(doc["switch_times_s"]):
        if not math.isfinite(float(v)):
            raise ValueError(f"report switch_times_s[{i}] is not finite")
    ordered = {
        "accuracy": float(doc["accuracy"]),
        "switch_times_s": [float(v) for v in doc["switch_times_s"]],
        "mean_switch_time_s": float(doc["mean_switch_time_s"]),
        "missed_switches": int(doc["missed_switches"]),
        "n_true_switches": int(doc["n_true_switches"]),
        "config": doc.get("config", {}),
    }
    _write_json(ordered, path)


def _write_json(doc: dict, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
