"""Ground-truth-known synthetic recordings from the exact generative model.

EEG is drawn as unit-variance white Gaussian noise per channel (the
verification target is the inference machinery, not EEG realism). The
hidden state sequence follows the two-state chain, and the envelope
difference equals the state's regression on the lagged EEG plus Gaussian
noise, exactly. Individual envelopes are reconstructed from the
difference and an independent common component so that neither envelope
is degenerate.

Randomness uses the counter-based Philox generator (numpy's
``np.random.Philox``); independent streams for EEG, chain, noise and
common component are derived from one seed via ``SeedSequence.spawn``, so
identical specs reproduce bit-identical recordings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_positive
from .data import MsmParams, MultichannelSeries, StateSequence, TransitionModel
from .embedding import lag_embed


@dataclass(frozen=True)
class SynthSpec:
    """Configuration of one synthetic recording."""

    n_samples: int
    n_channels: int
    n_lags: int
    beta1: np.ndarray
    beta2: np.ndarray
    sigma2_1: float
    sigma2_2: float
    p_stay: float
    initial: tuple[float, float] = (0.5, 0.5)
    fs_hz: float = 10.0
    direction: str = "future"
    seed: int = 0

    def transition(self) -> TransitionModel:
        return TransitionModel(self.p_stay, np.asarray(self.initial))

    def params(self) -> MsmParams:
        return MsmParams(
            self.beta1, self.beta2, self.sigma2_1, self.sigma2_2, self.transition()
        )

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_channels": self.n_channels,
            "n_lags": self.n_lags,
            "beta1": np.asarray(self.beta1).tolist(),
            "beta2": np.asarray(self.beta2).tolist(),
            "sigma2_1": self.sigma2_1,
            "sigma2_2": self.sigma2_2,
            "p_stay": self.p_stay,
            "initial": list(self.initial),
            "fs_hz": self.fs_hz,
            "direction": self.direction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        """Build a spec from a plain dict (e.g. a parsed JSON file).

        ``beta1`` defaults to a seeded random unit vector, ``beta2`` to
        its negation.
        """
        required = ("n_samples", "n_channels", "n_lags")
        for key in required:
            if key not in doc:
                raise ValueError(f"synthetic spec is missing field {key!r}")
        n_features = int(doc["n_channels"]) * int(doc["n_lags"])
        seed = int(doc.get("seed", 0))
        if "beta1" in doc:
            beta1 = np.asarray(doc["beta1"], dtype=float)
        else:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
            beta1 = rng.standard_normal(n_features)
            beta1 /= np.linalg.norm(beta1)
        beta2 = np.asarray(doc["beta2"], dtype=float) if "beta2" in doc else -beta1
        if beta1.size != n_features or beta2.size != n_features:
            raise ValueError(
                f"beta vectors must have length n_channels*n_lags = {n_features}"
            )
        return cls(
            n_samples=int(doc["n_samples"]),
            n_channels=int(doc["n_channels"]),
            n_lags=int(doc["n_lags"]),
            beta1=beta1,
            beta2=beta2,
            sigma2_1=float(doc.get("sigma2_1", 0.25)),
            sigma2_2=float(doc.get("sigma2_2", 0.25)),
            p_stay=float(doc.get("p_stay", 1.0 - 1e-3)),
            initial=tuple(doc.get("initial", (0.5, 0.5))),
            fs_hz=float(doc.get("fs_hz", 10.0)),
            direction=str(doc.get("direction", "future")),
            seed=seed,
        )

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such file: {path}")
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_spec(seed: int = 0) -> SynthSpec:
    """The canonical verification family: 8 features, unit beta, SNR 4."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    beta1 = rng.standard_normal(8)
    beta1 /= np.linalg.norm(beta1)
    return SynthSpec(
        n_samples=6000,
        n_channels=4,
        n_lags=2,
        beta1=beta1,
        beta2=-beta1,
        sigma2_1=0.25,
        sigma2_2=0.25,
        p_stay=1.0 - 1e-3,
        seed=seed,
    )


@dataclass(frozen=True)
class SyntheticRecording:
    """A generated recording with its hidden truth."""

    eeg: MultichannelSeries
    env1: MultichannelSeries
    env2: MultichannelSeries
    states: StateSequence
    true_params: MsmParams
    seed: int
    n_lags: int = 0
    direction: str = "future"


def sample_markov_chain(
    T: int, transition: TransitionModel, seed: int, fs_hz: float = 1.0
) -> StateSequence:
    """Draw a length-T state path from the symmetric two-state chain.

    The first state follows ``transition.initial``; afterwards the chain
    flips whenever a uniform draw reaches ``p_stay``. Deterministic given
    the seed (Philox stream).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    return _sample_chain(int(T), transition, rng, fs_hz)


def _sample_chain(
    T: int, transition: TransitionModel, rng: np.random.Generator, fs_hz: float
) -> StateSequence:
    u = rng.random(T)
    s0 = 1 if u[0] < transition.initial[0] else 2
    if T == 1:
        return StateSequence(np.array([s0]), fs_hz)
    # symmetric chain: a step flips the state iff its uniform >= p_stay
    flips = u[1:] >= transition.p_stay
    parity = np.concatenate([[0], np.cumsum(flips) % 2])
    states = np.where(parity == 1, 3 - s0, s0)
    return StateSequence(states, fs_hz)


def generate_synthetic(spec: SynthSpec) -> SyntheticRecording:
    """Generate one recording exactly from the switching-regression model.

    Samples outside the lag-valid range carry only the common component
    (the model does not constrain them); every valid sample satisfies
    ``env1 - env2 = beta_state @ design_row + noise`` by construction.
    """
    check_positive(spec.fs_hz, "fs_hz")
    T, C, L = spec.n_samples, spec.n_channels, spec.n_lags
    if T < L:
        raise ValueError(f"n_samples={T} is smaller than n_lags={L}")
    params = spec.params()
    if params.n_features != C * L:
        raise ValueError("beta length must equal n_channels * n_lags")

    streams = np.random.SeedSequence(spec.seed).spawn(4)
    rng_eeg, rng_chain, rng_noise, rng_common = (
        np.random.Generator(np.random.Philox(s)) for s in streams
    )

    eeg = MultichannelSeries(rng_eeg.standard_normal((T, C)), spec.fs_hz)
    states = _sample_chain(T, spec.transition(), rng_chain, spec.fs_hz)
    design = lag_embed(eeg, L, spec.direction)

    s_valid = states.states[design.valid_slice()]
    mean1 = design.data @ params.beta1
    mean2 = design.data @ params.beta2
    mean = np.where(s_valid == 1, mean1, mean2)
    sd = np.where(s_valid == 1, np.sqrt(params.sigma2_1), np.sqrt(params.sigma2_2))
    diff_valid = mean + sd * rng_noise.standard_normal(design.n_valid)

    diff = np.zeros(T)
    diff[design.valid_slice()] = diff_valid
    common = rng_common.standard_normal(T)
    env1 = MultichannelSeries(((common + diff) / 2.0).reshape(-1, 1), spec.fs_hz)
    env2 = MultichannelSeries(((common - diff) / 2.0).reshape(-1, 1), spec.fs_hz)
    return SyntheticRecording(
        eeg, env1, env2, states, params, spec.seed, L, spec.direction
    )


def segment_swap(
    env1: MultichannelSeries,
    env2: MultichannelSeries,
    states: StateSequence,
    segment_len_s: float,
    seed: int,
):
    """Randomly exchange the speaker assignment per fixed-length segment.

    Each segment independently swaps env1/env2 and flips the state labels
    with probability 1/2; a trailing partial segment gets its own draw.
    Returns (env1, env2, states) after swapping.
    """
    fs = env1.fs_hz
    if env2.fs_hz != fs or states.fs_hz != fs:
        raise ValueError("env1, env2 and states must share one sampling rate")
    T = env1.n_samples
    if env2.n_samples != T or len(states) != T:
        raise ValueError("env1, env2 and states must have equal length")
    seg = int(round(segment_len_s * fs))
    if seg < 1:
        raise ValueError("segment_len_s * fs_hz must be at least 1")

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    n_segments = -(-T // seg)
    swap = rng.random(n_segments) < 0.5

    e1 = env1.data.copy()
    e2 = env2.data.copy()
    st = states.states.copy()
    for i in np.flatnonzero(swap):
        sl = slice(i * seg, min((i + 1) * seg, T))
        e1[sl], e2[sl] = env2.data[sl], env1.data[sl]
        st[sl] = 3 - st[sl]
    return (
        MultichannelSeries(e1, fs, env1.labels),
        MultichannelSeries(e2, fs, env2.labels),
        StateSequence(st, fs),
    )
