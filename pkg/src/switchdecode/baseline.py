"""Window-level comparison pipeline: LS decoder, 1-D GMM, HMM smoothing.

The baseline reconstructs the attended envelope with a single pretrained
linear decoder, correlates the reconstruction with both candidate
envelopes over fixed windows, and smooths the window decisions with a
two-state HMM. Emission distributions come from an unsupervised
two-component Gaussian mixture over the pooled correlations; the
component with the higher mean plays the attended role.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from ._validation import as_float_vector, check_positive, readonly
from .data import (
    MultichannelSeries,
    PosteriorSequence,
    StateSequence,
    TransitionModel,
    split_envelope_pair,
)
from .embedding import LaggedDesign, WindowedCorrelations, lag_embed, window_correlations
from .switching import NumericalError, backward_smooth, decode, forward_pass

GMM_VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class PretrainedDecoder:
    """A linear stimulus-reconstruction decoder plus its training error.

    Mirrors the decoder JSON file: {beta, mse, lag_count, direction}.
    """

    beta: np.ndarray
    mse: float
    lag_count: int
    direction: str

    def __post_init__(self):
        object.__setattr__(self, "beta", readonly(as_float_vector(self.beta, "beta")))
        object.__setattr__(self, "mse", check_positive(self.mse, "mse"))

    def save(self, path) -> None:
        doc = {
            "beta": self.beta.tolist(),
            "mse": self.mse,
            "lag_count": int(self.lag_count),
            "direction": self.direction,
        }
        with open(path, "w", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PretrainedDecoder":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such file: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            np.asarray(doc["beta"]), doc["mse"], int(doc["lag_count"]), doc["direction"]
        )


@dataclass(frozen=True)
class Gmm2:
    """Two-component 1-D Gaussian mixture, attended component first."""

    mean_att: float
    mean_unatt: float
    var_att: float
    var_unatt: float
    weight_att: float

    def __post_init__(self):
        if self.mean_att < self.mean_unatt:
            raise ValueError("attended component must have the higher mean")
        check_positive(self.var_att, "var_att")
        check_positive(self.var_unatt, "var_unatt")
        if not (0.0 < self.weight_att < 1.0):
            raise ValueError(f"weight_att must lie in (0, 1), got {self.weight_att}")


@dataclass(frozen=True)
class HmmResult:
    """Window-rate posteriors and decoded states."""

    posteriors: PosteriorSequence
    decoded: StateSequence
    window_len_samples: int


def train_ls_decoder(
    design: LaggedDesign, attended_env: np.ndarray, ridge: float = 0.0
) -> PretrainedDecoder:
    """Least-squares decoder for the attended envelope.

    Solves the (optionally ridge-regularized) normal equations for
    reconstructing ``attended_env`` from the design rows and records the
    training mean squared residual.
    """
    env = as_float_vector(attended_env, "attended_env")
    if env.size != design.n_valid:
        raise ValueError(
            f"attended_env has length {env.size}, design has {design.n_valid} rows"
        )
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    X = design.data
    gram = X.T @ X
    if ridge > 0:
        gram = gram + ridge * np.eye(design.n_features)
    try:
        beta = scipy.linalg.solve(gram, X.T @ env, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"normal equations are singular: {exc}") from exc
    if not np.all(np.isfinite(beta)):
        raise NumericalError("normal equations produced non-finite coefficients")
    resid = env - X @ beta
    mse = float(resid @ resid) / env.size
    return PretrainedDecoder(beta, max(mse, 1e-18), design.lag_count, design.direction)


def fit_gmm2(
    values: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-8,
    restarts: int = 4,
    seed: int = 0,
) -> Gmm2:
    """Fit a two-component 1-D Gaussian mixture by EM.

    One deterministic run initializes the components from the lower and
    upper halves of the sorted data (median split); ``restarts``
    additional runs start from random pairs of data points. The fit with
    the highest final log-likelihood wins. Variances are floored at 1e-8.
    """
    x = as_float_vector(values, "values")
    if x.size < 4:
        raise ValueError(f"need at least 4 values to fit a mixture, got {x.size}")
    if np.ptp(x) == 0.0:
        raise ValueError("all values are identical; no mixture structure to fit")

    rng = np.random.default_rng(seed)
    best = None
    best_ll = -np.inf
    for attempt in range(restarts + 1):
        if attempt == 0:
            init = _median_split_init(x)
        else:
            init = _random_init(x, rng)
        fit, ll = _gmm_em(x, init, max_iter, tol)
        if ll > best_ll:
            best, best_ll = fit, ll
    mu, var, w = best
    order = np.argsort(mu)[::-1]  # higher mean first = attended
    return Gmm2(
        float(mu[order[0]]),
        float(mu[order[1]]),
        float(var[order[0]]),
        float(var[order[1]]),
        float(np.clip(w[order[0]], 1e-6, 1.0 - 1e-6)),
    )


def _median_split_init(x: np.ndarray):
    s = np.sort(x)
    half = s.size // 2
    lo, hi = s[:half], s[half:]
    mu = np.array([lo.mean(), hi.mean()])
    var = np.maximum(np.array([lo.var(), hi.var()]), GMM_VARIANCE_FLOOR)
    return mu, var, np.array([0.5, 0.5])


def _random_init(x: np.ndarray, rng: np.random.Generator):
    mu = rng.choice(x, size=2, replace=False)
    var = np.full(2, max(x.var(), GMM_VARIANCE_FLOOR))
    return np.asarray(mu, dtype=float), var, np.array([0.5, 0.5])


def _gmm_em(x: np.ndarray, init, max_iter: int, tol: float):
    mu, var, w = (np.array(v, dtype=float) for v in init)
    ll_prev = -np.inf
    ll = ll_prev
    for _ in range(max_iter):
        # E-step in the log domain
        logp = -0.5 * (np.log(2.0 * np.pi * var) + (x[:, None] - mu) ** 2 / var)
        logp += np.log(w)
        top = logp.max(axis=1, keepdims=True)
        norm = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
        resp = np.exp(logp - norm[:, None])
        ll = float(norm.sum())
        if ll - ll_prev < tol * max(1.0, abs(ll)) and ll_prev > -np.inf:
            break
        ll_prev = ll
        # M-step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk
        var = np.maximum(var, GMM_VARIANCE_FLOOR)
        w = nk / x.size
    return (mu, var, w), ll


def hmm_postprocess(
    corrs: WindowedCorrelations, gmm: Gmm2, transition: TransitionModel
) -> HmmResult:
    """Smooth window-level correlations with a two-state HMM.

    Each window emits the correlation pair (r1, r2); under state 1, r1 is
    drawn from the attended component and r2 from the unattended one, and
    vice versa under state 2, treated as independent given the state.
    Posteriors come from the same filtering/smoothing pair used at sample
    level, run at window rate.
    """
    log_att_1 = _normal_loglik(corrs.r1, gmm.mean_att, gmm.var_att)
    log_un_1 = _normal_loglik(corrs.r1, gmm.mean_unatt, gmm.var_unatt)
    log_att_2 = _normal_loglik(corrs.r2, gmm.mean_att, gmm.var_att)
    log_un_2 = _normal_loglik(corrs.r2, gmm.mean_unatt, gmm.var_unatt)
    emissions = np.column_stack([log_att_1 + log_un_2, log_un_1 + log_att_2])
    posteriors = backward_smooth(forward_pass(emissions, transition), transition)
    window_rate = (
        corrs.fs_hz / corrs.window_len_samples if corrs.fs_hz is not None else 1.0
    )
    decoded = decode(posteriors, use_smoothed=True, fs_hz=window_rate)
    return HmmResult(posteriors, decoded, corrs.window_len_samples)


def _normal_loglik(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


# ---------------------------------------------------------------------------
# Estimator wrappers
# ---------------------------------------------------------------------------


class LeastSquaresDecoder(BaseEstimator):
    """Supervised stimulus-reconstruction decoder (pretraining stage).

    Fits a ridge-regularized linear map from the lagged EEG design to the
    attended envelope. The fitted ``decoder_`` (a PretrainedDecoder)
    initializes the switching model or drives the HMM baseline.
    """

    def __init__(
        self,
        n_lags: int = 6,
        lag_direction: str = "future",
        ridge: float = 0.0,
        normalize_envelopes: bool = True,
        fs_hz: float = 10.0,
    ):
        self.n_lags = n_lags
        self.lag_direction = lag_direction
        self.ridge = ridge
        self.normalize_envelopes = normalize_envelopes
        self.fs_hz = fs_hz

    def fit(self, X, y):
        """X: EEG (T, C) or MultichannelSeries; y: attended envelope (T,)."""
        eeg = X if isinstance(X, MultichannelSeries) else MultichannelSeries(
            np.asarray(X, dtype=np.float64), self.fs_hz
        )
        env = y if isinstance(y, MultichannelSeries) else MultichannelSeries(
            np.asarray(y, dtype=np.float64).reshape(-1, 1), eeg.fs_hz
        )
        if self.normalize_envelopes:
            env = env.zscored()
        design = lag_embed(eeg, self.n_lags, self.lag_direction)
        target = env.channel(0)[design.valid_slice()]
        self.decoder_ = train_ls_decoder(design, target, self.ridge)
        self.beta_ = self.decoder_.beta
        self.mse_ = self.decoder_.mse
        self.n_features_in_ = eeg.n_channels
        return self

    def predict(self, X) -> np.ndarray:
        """Reconstructed envelope, one value per valid design row."""
        if not hasattr(self, "decoder_"):
            raise ValueError("this LeastSquaresDecoder instance is not fitted yet")
        eeg = X if isinstance(X, MultichannelSeries) else MultichannelSeries(
            np.asarray(X, dtype=np.float64), self.fs_hz
        )
        design = lag_embed(eeg, self.n_lags, self.lag_direction)
        return design.data @ self.beta_


class CorrelationHmmDecoder(BaseEstimator):
    """Window-level attention decoder: correlations + GMM + HMM smoothing.

    Requires a pretrained decoder; fitting estimates the emission mixture
    from the recording's own pooled correlations (no labels) and smooths
    the window decisions through the Markov chain.
    """

    def __init__(
        self,
        decoder: PretrainedDecoder | None = None,
        window_len_s: float = 1.0,
        p_stay: float = 1.0 - 1e-3,
        normalize_envelopes: bool = True,
        gmm_restarts: int = 4,
        fs_hz: float = 10.0,
        random_state: int = 0,
    ):
        self.decoder = decoder
        self.window_len_s = window_len_s
        self.p_stay = p_stay
        self.normalize_envelopes = normalize_envelopes
        self.gmm_restarts = gmm_restarts
        self.fs_hz = fs_hz
        self.random_state = random_state

    def fit(self, X, y):
        """X: EEG; y: (T, 2) envelope pair or pair of series."""
        if self.decoder is None:
            raise ValueError("CorrelationHmmDecoder needs a pretrained decoder")
        eeg = X if isinstance(X, MultichannelSeries) else MultichannelSeries(
            np.asarray(X, dtype=np.float64), self.fs_hz
        )
        env1, env2 = split_envelope_pair(y, eeg.fs_hz, eeg.n_samples)
        if self.normalize_envelopes:
            env1, env2 = env1.zscored(), env2.zscored()
        design = lag_embed(eeg, self.decoder.lag_count, self.decoder.direction)
        window = int(round(self.window_len_s * eeg.fs_hz))
        corrs = window_correlations(design, self.decoder.beta, env1, env2, window)
        pooled = np.concatenate([corrs.r1, corrs.r2])
        self.gmm_ = fit_gmm2(pooled, restarts=self.gmm_restarts, seed=self.random_state)
        result = hmm_postprocess(corrs, self.gmm_, TransitionModel(self.p_stay))
        self.correlations_ = corrs
        self.result_ = result
        self.posteriors_ = result.posteriors
        self.states_ = result.decoded
        self.window_len_samples_ = window
        self.design_offset_ = design.t_offset
        return self

    def predict(self) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise ValueError("this CorrelationHmmDecoder instance is not fitted yet")
        return self.states_.states

    def predict_proba(self) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise ValueError("this CorrelationHmmDecoder instance is not fitted yet")
        return self.posteriors_.smoothed
