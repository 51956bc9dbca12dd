"""Decoding accuracy and switch-detection latency metrics.

Accuracy is the fraction of samples whose predicted attended speaker
matches the truth. Switch detection time measures, for every true switch,
the absolute time gap to the nearest posterior crossing of 0.5 in favor
of the newly attended state; crossings anywhere in the recording count,
before or after the switch, because the smoother is non-causal. A switch
whose gap exceeds the interval to its neighboring true switches is a
miss and is scored as that interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PosteriorSequence, StateSequence
from .switching import decode


@dataclass(frozen=True)
class SwitchDetection:
    """Per-switch detection times (seconds) and the number of misses."""

    times_s: tuple[float, ...]
    missed: int


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary for one recording."""

    accuracy: float
    switch_times_s: tuple[float, ...]
    mean_switch_time_s: float
    missed_switches: int
    n_true_switches: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise ValueError(f"accuracy must lie in [0, 1], got {self.accuracy}")
        if len(self.switch_times_s) != self.n_true_switches:
            raise ValueError("one detection time per true switch is required")
        if self.missed_switches > self.n_true_switches:
            raise ValueError("missed_switches cannot exceed n_true_switches")
        if any(t < 0 for t in self.switch_times_s):
            raise ValueError("switch detection times must be non-negative")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "switch_times_s": list(self.switch_times_s),
            "mean_switch_time_s": self.mean_switch_time_s,
            "missed_switches": self.missed_switches,
            "n_true_switches": self.n_true_switches,
            "config": dict(self.config),
        }


def _states_array(x) -> np.ndarray:
    if isinstance(x, StateSequence):
        return x.states
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError("state sequence must be 1-D")
    return arr


def decoding_accuracy(pred, truth) -> float:
    """Fraction of samples where predicted and true attended speaker agree."""
    p = _states_array(pred)
    t = _states_array(truth)
    if p.size != t.size:
        raise ValueError(f"length mismatch: pred has {p.size}, truth has {t.size}")
    return float(np.mean(p == t))


def switch_detection_times(
    posteriors: PosteriorSequence,
    truth,
    fs_hz: float,
    min_hold_samples: int = 1,
) -> SwitchDetection:
    """Detection time for every true switch, with the missed-switch rule.

    A candidate detection for a switch into state s is any sample where
    the posterior of s rises above 0.5 from at most 0.5 (and stays above
    for ``min_hold_samples`` samples). The detection time is the absolute
    gap to the nearest candidate. When it exceeds the interval to the
    neighboring true switches (the single adjacent gap for the first and
    last switch), the switch counts as missed and is scored as that
    interval. A truth without switches yields an empty result.
    """
    t_arr = _states_array(truth)
    probs = posteriors.smoothed if posteriors.smoothed is not None else posteriors.filtered
    if probs.shape[0] != t_arr.size:
        raise ValueError(
            f"length mismatch: posteriors have {probs.shape[0]} samples, "
            f"truth has {t_arr.size}"
        )
    if min_hold_samples < 1:
        raise ValueError("min_hold_samples must be >= 1")

    T = t_arr.size
    switch_idx = np.flatnonzero(t_arr[1:] != t_arr[:-1]) + 1
    if switch_idx.size == 0:
        return SwitchDetection((), 0)

    crossings = {s: _crossings(probs[:, s - 1], min_hold_samples) for s in (1, 2)}

    times: list[float] = []
    missed = 0
    for k, t_s in enumerate(switch_idx):
        new_state = int(t_arr[t_s])
        interval_s = _miss_interval(switch_idx, k, T) / fs_hz
        cand = crossings[new_state]
        if cand.size:
            detection_s = float(np.min(np.abs(cand - t_s))) / fs_hz
        else:
            detection_s = np.inf
        if detection_s > interval_s:
            times.append(interval_s)
            missed += 1
        else:
            times.append(detection_s)
    return SwitchDetection(tuple(times), missed)


def _crossings(p: np.ndarray, hold: int) -> np.ndarray:
    """Samples where p rises above 0.5 and stays above for ``hold`` samples."""
    up = (p[1:] > 0.5) & (p[:-1] <= 0.5)
    idx = np.flatnonzero(up) + 1
    if hold > 1:
        keep = [tau for tau in idx if np.all(p[tau : min(tau + hold, p.size)] > 0.5)]
        idx = np.asarray(keep, dtype=np.int64)
    return idx


def _miss_interval(switch_idx: np.ndarray, k: int, T: int) -> float:
    """Inter-switch gap (samples) that caps the detection time for switch k."""
    gaps = []
    if k > 0:
        gaps.append(switch_idx[k] - switch_idx[k - 1])
    if k < switch_idx.size - 1:
        gaps.append(switch_idx[k + 1] - switch_idx[k])
    if gaps:
        return float(min(gaps))
    # only switch in the recording: farthest possible crossing distance
    return float(max(switch_idx[k], (T - 1) - switch_idx[k]))


def align_labels(posteriors: PosteriorSequence, truth) -> tuple[PosteriorSequence, bool]:
    """Resolve the label-permutation ambiguity of unsupervised fits.

    Returns the posteriors with columns swapped iff swapping strictly
    improves the decoded accuracy against the truth, plus a flag saying
    whether the swap happened.
    """
    t_arr = _states_array(truth)
    use_smoothed = posteriors.smoothed is not None
    acc = decoding_accuracy(decode(posteriors, use_smoothed=use_smoothed), t_arr)
    swapped = posteriors.column_swapped()
    acc_swapped = decoding_accuracy(decode(swapped, use_smoothed=use_smoothed), t_arr)
    if acc_swapped > acc:
        return swapped, True
    return posteriors, False


def evaluate(
    posteriors: PosteriorSequence,
    truth,
    fs_hz: float,
    config: dict | None = None,
    use_smoothed: bool | None = None,
    align: bool = False,
    min_hold_samples: int = 1,
) -> EvalReport:
    """Full report: accuracy plus switch-detection metrics.

    ``use_smoothed=None`` picks smoothed posteriors when available.
    ``align=True`` applies :func:`align_labels` first (for fully
    unsupervised fits) and records the decision in the config echo.
    """
    config = dict(config or {})
    if align:
        posteriors, did_swap = align_labels(posteriors, truth)
        config["label_alignment_applied"] = did_swap
    if use_smoothed is None:
        use_smoothed = posteriors.smoothed is not None
    pred = decode(posteriors, use_smoothed=use_smoothed, fs_hz=fs_hz)
    accuracy = decoding_accuracy(pred, truth)
    detection = switch_detection_times(
        posteriors, truth, fs_hz, min_hold_samples=min_hold_samples
    )
    mean_time = float(np.mean(detection.times_s)) if detection.times_s else 0.0
    return EvalReport(
        accuracy=accuracy,
        switch_times_s=detection.times_s,
        mean_switch_time_s=mean_time,
        missed_switches=detection.missed,
        n_true_switches=len(detection.times_s),
        config=config,
    )
