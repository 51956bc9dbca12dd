"""Spatial-temporal lag embedding and windowed correlation features.

A series of C channels is expanded into rows of C*L values holding L
consecutive samples per channel, ordered channel-major, lag-minor: column
``c*L + l`` is channel ``c`` at lag ``l``. Rows without a full set of lags
are dropped, never zero-padded; ``t_offset`` records which original sample
the first kept row corresponds to.

Lag direction is configurable. ``past`` stacks samples at and before t,
``future`` stacks samples at and after t. The latter is the default used
by stimulus-reconstruction decoders, which read neural activity that
trails the stimulus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_float_vector, check_same_length, readonly
from .data import MultichannelSeries

VARIANCE_GUARD = 1e-12

DIRECTIONS = ("past", "future")


@dataclass(frozen=True)
class LaggedDesign:
    """A (T_valid, C*L) design matrix with its alignment metadata.

    ``t_offset`` maps row k to sample ``k + t_offset`` of the source
    series; ``T_valid = T - lag_count + 1``.
    """

    data: np.ndarray
    lag_count: int
    t_offset: int
    fs_hz: float
    direction: str

    def __post_init__(self):
        object.__setattr__(self, "data", readonly(self.data))
        if self.lag_count < 1:
            raise ValueError("lag_count must be >= 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")

    @property
    def n_valid(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]

    @property
    def n_source_samples(self) -> int:
        return self.n_valid + self.lag_count - 1

    def valid_slice(self) -> slice:
        """Source-series index range the design rows are aligned to."""
        return slice(self.t_offset, self.t_offset + self.n_valid)


@dataclass(frozen=True)
class WindowedCorrelations:
    """Per-window Pearson correlations against each candidate envelope."""

    r1: np.ndarray
    r2: np.ndarray
    window_len_samples: int
    fs_hz: float | None = None

    def __post_init__(self):
        r1 = as_float_vector(self.r1, "r1")
        r2 = as_float_vector(self.r2, "r2")
        check_same_length(r1, r2, "r1", "r2")
        for name, arr in (("r1", r1), ("r2", r2)):
            if np.any(np.abs(arr) > 1.0 + 1e-12):
                raise ValueError(f"{name} contains a value outside [-1, 1]")
        object.__setattr__(self, "r1", readonly(r1))
        object.__setattr__(self, "r2", readonly(r2))
        if self.window_len_samples < 3:
            raise ValueError("window_len_samples must be >= 3")

    @property
    def n_windows(self) -> int:
        return self.r1.size


def lag_embed(series: MultichannelSeries, lags: int, direction: str = "future") -> LaggedDesign:
    """Stack ``lags`` consecutive samples of every channel into each row.

    For ``direction="past"`` row k column ``c*lags + l`` holds
    ``series[k + lags - 1 - l, c]`` (t_offset = lags - 1); for
    ``"future"`` it holds ``series[k + l, c]`` (t_offset = 0). Values are
    copied verbatim, no arithmetic is applied.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    L = int(lags)
    if L < 1:
        raise ValueError("lags must be >= 1")
    T, C = series.n_samples, series.n_channels
    if T < L:
        raise ValueError(f"series has {T} samples, need at least {L} for {L} lags")
    n_valid = T - L + 1
    out = np.empty((n_valid, C * L))
    data = series.data
    for c in range(C):
        for l in range(L):
            if direction == "past":
                out[:, c * L + l] = data[L - 1 - l : T - l, c]
            else:
                out[:, c * L + l] = data[l : n_valid + l, c]
    t_offset = L - 1 if direction == "past" else 0
    return LaggedDesign(out, L, t_offset, series.fs_hz, direction)


def difference_observation(
    env1: MultichannelSeries, env2: MultichannelSeries, design: LaggedDesign
) -> np.ndarray:
    """Envelope difference aligned to the design rows.

    Returns ``y`` with ``y[k] = env1[k + t_offset] - env2[k + t_offset]``,
    one entry per design row.
    """
    _check_envelope(env1, "env1", design)
    _check_envelope(env2, "env2", design)
    sl = design.valid_slice()
    return env1.channel(0)[sl] - env2.channel(0)[sl]


def window_correlations(
    design: LaggedDesign,
    decoder: np.ndarray,
    env1: MultichannelSeries,
    env2: MultichannelSeries,
    window_len_samples: int,
) -> WindowedCorrelations:
    """Correlate the reconstructed envelope with both candidates per window.

    The reconstruction is ``design @ decoder``. Windows are non-overlapping
    and a trailing partial window is discarded. Within a window, if either
    signal in a pair has variance below 1e-12 that pair's correlation is
    reported as 0.
    """
    decoder = as_float_vector(decoder, "decoder")
    if decoder.size != design.n_features:
        raise ValueError(
            f"decoder has length {decoder.size}, design has {design.n_features} columns"
        )
    w = int(window_len_samples)
    if w < 3:
        raise ValueError("window_len_samples must be >= 3")
    _check_envelope(env1, "env1", design)
    _check_envelope(env2, "env2", design)

    recon = design.data @ decoder
    sl = design.valid_slice()
    e1 = env1.channel(0)[sl]
    e2 = env2.channel(0)[sl]
    n_windows = design.n_valid // w
    r1 = np.zeros(n_windows)
    r2 = np.zeros(n_windows)
    for i in range(n_windows):
        seg = slice(i * w, (i + 1) * w)
        r1[i] = _pearson(recon[seg], e1[seg])
        r2[i] = _pearson(recon[seg], e2[seg])
    return WindowedCorrelations(r1, r2, w, design.fs_hz)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    va = float(a @ a) / a.size
    vb = float(b @ b) / b.size
    if va < VARIANCE_GUARD or vb < VARIANCE_GUARD:
        return 0.0
    return float(a @ b) / (a.size * np.sqrt(va * vb))


def _check_envelope(env: MultichannelSeries, name: str, design: LaggedDesign) -> None:
    if env.n_channels != 1:
        raise ValueError(f"{name} must be single-channel, got {env.n_channels} channels")
    if env.n_samples != design.n_source_samples:
        raise ValueError(
            f"{name} has {env.n_samples} samples, design expects "
            f"{design.n_source_samples}"
        )
    if env.fs_hz != design.fs_hz:
        raise ValueError(
            f"{name} sampling rate {env.fs_hz} differs from design rate {design.fs_hz}"
        )
