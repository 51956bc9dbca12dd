"""Two-state switching linear regression with Markov dynamics.

The observation at sample t is the difference between the two candidate
speech envelopes. Conditioned on a hidden attention state it follows a
Gaussian regression on the lagged EEG design row, with state-specific
coefficients and noise variance. The hidden state evolves as a symmetric
two-state Markov chain. Inference is filtering plus fixed-interval
smoothing; parameters are estimated by EM with the chain parameters held
fixed (they act as a smoothness hyperparameter).

Numerical scheme: the forward recursion works with per-step normalized
probabilities, exponentiating log-emissions only after subtracting the
per-step maximum, which is underflow-safe for two states. The M-step
solves symmetric positive-definite normal equations, never forming an
explicit inverse.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from ._validation import as_float_vector, check_positive, readonly
from .data import (
    MsmParams,
    MultichannelSeries,
    PosteriorSequence,
    StateSequence,
    TransitionModel,
    split_envelope_pair,
)
from .embedding import LaggedDesign, difference_observation, lag_embed

VARIANCE_FLOOR = 1e-10
DEFAULT_RIDGE_SCALE = 1e-6
TIE_EPS = 1e-15
LOGLIK_DECREASE_ABORT = 1e-6


class NumericalError(RuntimeError):
    """An internal numerical failure (singular solve, underflow, divergence)."""


@dataclass(frozen=True)
class EmFitResult:
    """Outcome of an EM run: final parameters, posteriors and diagnostics."""

    params: MsmParams
    posteriors: PosteriorSequence
    loglik_trace: np.ndarray
    iterations: int
    converged: bool

    def __post_init__(self):
        object.__setattr__(self, "loglik_trace", readonly(self.loglik_trace))


def emission_loglik(y: np.ndarray, design: LaggedDesign, params: MsmParams) -> np.ndarray:
    """Per-sample log-likelihood of the observation under each state.

    Entry (t, i) is ``-0.5*log(2*pi*sigma2_i) - (y_t - beta_i @ x_t)**2 /
    (2*sigma2_i)``, evaluated in the log domain throughout.
    """
    y = as_float_vector(y, "y")
    if y.size != design.n_valid:
        raise ValueError(f"y has length {y.size}, design has {design.n_valid} rows")
    if params.n_features != design.n_features:
        raise ValueError(
            f"params expect {params.n_features} features, design has {design.n_features}"
        )
    out = np.empty((y.size, 2))
    for i, (beta, s2) in enumerate(
        ((params.beta1, params.sigma2_1), (params.beta2, params.sigma2_2))
    ):
        resid = y - design.data @ beta
        out[:, i] = -0.5 * np.log(2.0 * np.pi * s2) - resid * resid / (2.0 * s2)
    if not np.all(np.isfinite(out)):
        raise NumericalError("emission log-likelihood overflowed; check data scaling")
    return out


def forward_pass(emissions: np.ndarray, transition: TransitionModel) -> PosteriorSequence:
    """Filtering recursion over the two-state chain.

    Alternates the one-step state prediction through the transition matrix
    with a normalized Bayes update against the per-sample emission
    likelihoods. The first sample is updated directly against the initial
    state distribution. Accumulates the total observed-data log-likelihood
    from the per-step normalizers.
    """
    em = np.asarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[1] != 2 or em.shape[0] < 1:
        raise ValueError("emissions must be a non-empty (T, 2) matrix")
    if not np.all(np.isfinite(em)):
        raise ValueError("emissions must be finite")

    p = transition.p_stay
    q = 1.0 - p
    pi1, pi2 = float(transition.initial[0]), float(transition.initial[1])
    log1, log2 = em[:, 0].tolist(), em[:, 1].tolist()
    exp, log = math.exp, math.log

    filtered = []
    loglik = 0.0
    c1 = c2 = 0.0
    for t in range(len(log1)):
        if t == 0:
            pred1, pred2 = pi1, pi2
        else:
            pred1 = p * c1 + q * c2
            pred2 = q * c1 + p * c2
        a, b = log1[t], log2[t]
        shift = a if a >= b else b  # max-shift keeps exp in range
        u1 = exp(a - shift) * pred1
        u2 = exp(b - shift) * pred2
        z = u1 + u2
        if z <= 0.0:
            raise NumericalError(
                f"both state probabilities underflowed to zero at sample {t}"
            )
        c1, c2 = u1 / z, u2 / z
        loglik += shift + log(z)
        filtered.append((c1, c2))
    return PosteriorSequence(np.asarray(filtered), None, loglik)


def backward_smooth(
    posteriors: PosteriorSequence, transition: TransitionModel
) -> PosteriorSequence:
    """Fixed-interval smoothing given filtered posteriors.

    Runs backward from the last sample, combining each filtered posterior
    with the smoothed posterior one step ahead through the transition
    matrix, normalizing by the one-step prediction. Rows are renormalized
    to kill rounding drift.
    """
    filt = posteriors.filtered
    T = filt.shape[0]
    p = transition.p_stay
    q = 1.0 - p
    f1, f2 = filt[:, 0].tolist(), filt[:, 1].tolist()

    s1, s2 = f1[-1], f2[-1]
    rows = [(s1, s2)]
    for t in range(T - 2, -1, -1):
        a1, a2 = f1[t], f2[t]
        pred1 = p * a1 + q * a2
        pred2 = q * a1 + p * a2
        # ratio smoothed/predicted one step ahead; 0/0 contributes nothing
        if s1 > 0.0:
            if pred1 <= 0.0:
                raise NumericalError(
                    f"impossible transition at sample {t}: smoothed mass in a state "
                    "with zero predicted probability"
                )
            r1 = s1 / pred1
        else:
            r1 = 0.0
        if s2 > 0.0:
            if pred2 <= 0.0:
                raise NumericalError(
                    f"impossible transition at sample {t}: smoothed mass in a state "
                    "with zero predicted probability"
                )
            r2 = s2 / pred2
        else:
            r2 = 0.0
        n1 = a1 * (p * r1 + q * r2)
        n2 = a2 * (q * r1 + p * r2)
        z = n1 + n2
        if z <= 0.0:
            raise NumericalError(f"smoothing denominator vanished at sample {t}")
        s1, s2 = n1 / z, n2 / z
        rows.append((s1, s2))
    rows.reverse()
    return PosteriorSequence(filt, np.asarray(rows), posteriors.loglik)


def m_step_beta(
    design: LaggedDesign,
    y: np.ndarray,
    weights: np.ndarray,
    ridge: float | None = None,
) -> np.ndarray:
    """Posterior-weighted regression coefficient update.

    Solves ``(sum_t w_t x_t x_t' + ridge*I) beta = sum_t w_t x_t y_t`` via
    a symmetric positive-definite solve. ``ridge=None`` selects the
    default ``1e-6 * mean(diag(weighted Gram))``; pass 0 for the pure
    normal equations.
    """
    y = as_float_vector(y, "y")
    w = as_float_vector(weights, "weights")
    if y.size != design.n_valid or w.size != design.n_valid:
        raise ValueError("y and weights must have one entry per design row")
    if np.any(w < 0) or np.any(w > 1.0 + 1e-12):
        raise ValueError("weights must lie in [0, 1]")
    if w.sum() <= 0.0:
        raise ValueError("weights sum to zero; no data supports this state")

    X = design.data
    Xw = X * w[:, None]
    gram = X.T @ Xw
    rhs = X.T @ (w * y)
    if ridge is None:
        ridge = DEFAULT_RIDGE_SCALE * np.trace(gram) / design.n_features
    elif ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge > 0:
        gram = gram + ridge * np.eye(design.n_features)
    try:
        beta = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"weighted Gram matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(beta)):
        raise NumericalError("weighted Gram solve produced non-finite coefficients")
    return beta


def m_step_sigma(
    design: LaggedDesign, y: np.ndarray, beta: np.ndarray, weights: np.ndarray
) -> float:
    """Posterior-weighted mean squared residual, floored at 1e-10."""
    y = as_float_vector(y, "y")
    w = as_float_vector(weights, "weights")
    beta = as_float_vector(beta, "beta")
    if w.sum() <= 0.0:
        raise ValueError("weights sum to zero; no data supports this state")
    resid = y - design.data @ beta
    s2 = float((w * resid * resid).sum() / w.sum())
    return max(s2, VARIANCE_FLOOR)


def init_from_pretrained(
    beta_star: np.ndarray, mse_star: float, transition: TransitionModel
) -> MsmParams:
    """Initialize both states from a single pretrained decoder.

    State 1 starts at the decoder, state 2 at its negation (the same
    decoder applied to the other speaker flips the sign of the difference
    observation). Both noise variances start at the decoder's training
    mean squared error. The symmetry is an initialization device only and
    is not enforced afterwards.
    """
    beta = as_float_vector(beta_star, "beta_star")
    mse = check_positive(mse_star, "mse_star")
    if not np.any(beta):
        warnings.warn(
            "pretrained decoder is identically zero: both states start identical "
            "and EM cannot break the symmetry",
            RuntimeWarning,
            stacklevel=2,
        )
    return MsmParams(beta, -beta, mse, mse, transition)


def fit_em(
    design: LaggedDesign,
    y: np.ndarray,
    init: MsmParams,
    *,
    max_iter: int = 100,
    tol: float = 1e-6,
    ridge: float | None = None,
    update_transition: bool = False,
) -> EmFitResult:
    """Estimate the switching-regression parameters by batch EM.

    Each iteration runs filtering and smoothing under the current
    parameters, then refits each state's coefficients and variance with
    the smoothed posteriors as weights. Stops when the relative change of
    the observed-data log-likelihood falls below ``tol`` or after
    ``max_iter`` parameter updates. The transition probabilities are held
    fixed unless ``update_transition`` is set, in which case the shared
    self-transition probability is re-estimated from expected transition
    counts (keeping the symmetric tying).

    The log-likelihood trace is monotone for a correct implementation; a
    decrease beyond 1e-6 aborts with diagnostics rather than returning a
    silently wrong fit.
    """
    y = as_float_vector(y, "y")
    params = init
    transition = init.transition
    trace: list[float] = []
    converged = False
    iterations = 0

    def e_step(current: MsmParams) -> PosteriorSequence:
        em = emission_loglik(y, design, current)
        return backward_smooth(forward_pass(em, current.transition), current.transition)

    while iterations < max_iter:
        post = e_step(params)
        _record(trace, post.loglik)
        if len(trace) > 1 and _relative_change(trace[-1], trace[-2]) < tol:
            converged = True
            break
        w = post.smoothed
        beta1 = m_step_beta(design, y, w[:, 0], ridge)
        beta2 = m_step_beta(design, y, w[:, 1], ridge)
        sigma2_1 = m_step_sigma(design, y, beta1, w[:, 0])
        sigma2_2 = m_step_sigma(design, y, beta2, w[:, 1])
        if update_transition:
            transition = TransitionModel(
                _expected_stay_fraction(post, transition), transition.initial
            )
        params = MsmParams(beta1, beta2, sigma2_1, sigma2_2, transition)
        iterations += 1
    else:
        post = e_step(params)
        _record(trace, post.loglik)

    return EmFitResult(params, post, np.asarray(trace), iterations, converged)


def _record(trace: list[float], loglik: float) -> None:
    if trace and loglik < trace[-1] - LOGLIK_DECREASE_ABORT:
        raise NumericalError(
            f"log-likelihood decreased at EM iteration {len(trace)}: "
            f"{trace[-1]:.9g} -> {loglik:.9g} (delta {loglik - trace[-1]:.3e}); "
            "this indicates an implementation bug, not a data condition"
        )
    trace.append(loglik)


def _relative_change(current: float, previous: float) -> float:
    return abs(current - previous) / max(1.0, abs(current))


def _expected_stay_fraction(post: PosteriorSequence, transition: TransitionModel) -> float:
    """Expected share of self-transitions under the smoothed posterior."""
    filt = post.filtered
    smo = post.smoothed
    P = transition.matrix
    pred = filt[:-1] @ P  # (T-1, 2), entry (t, j) = Pr(S_{t+1}=j | psi_t)
    ratio = np.where(pred > 0.0, smo[1:] / np.where(pred > 0.0, pred, 1.0), 0.0)
    stay = 0.0
    total = 0.0
    for i in range(2):
        for j in range(2):
            xi = float((filt[:-1, i] * P[i, j] * ratio[:, j]).sum())
            total += xi
            if i == j:
                stay += xi
    if total <= 0.0:
        raise NumericalError("no transitions to estimate the stay probability from")
    return stay / total


def decode(
    posteriors: PosteriorSequence, use_smoothed: bool = True, fs_hz: float = 1.0
) -> StateSequence:
    """Per-sample state decisions from the posteriors.

    Takes the argmax at each sample; exact ties (probability gap below
    1e-15) keep the previous sample's state, and a tie at the first sample
    resolves to state 1.
    """
    if use_smoothed:
        if posteriors.smoothed is None:
            raise ValueError("smoothed posteriors requested but not present")
        probs = posteriors.smoothed
    else:
        probs = posteriors.filtered
    states = np.empty(probs.shape[0], dtype=np.int64)
    prev = 1
    for t in range(probs.shape[0]):
        gap = probs[t, 0] - probs[t, 1]
        if abs(gap) < TIE_EPS:
            states[t] = prev
        else:
            states[t] = 1 if gap > 0 else 2
        prev = states[t]
    return StateSequence(states, fs_hz)


# ---------------------------------------------------------------------------
# Parameter file format
# ---------------------------------------------------------------------------


def save_msm_params(params: MsmParams, path, *, lag_count: int, direction: str) -> None:
    """Serialize fitted parameters together with their embedding config."""
    doc = {
        "beta1": params.beta1.tolist(),
        "beta2": params.beta2.tolist(),
        "sigma2": [params.sigma2_1, params.sigma2_2],
        "p_stay": params.transition.p_stay,
        "initial": params.transition.initial.tolist(),
        "lag_count": int(lag_count),
        "direction": direction,
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_msm_params(path) -> tuple[MsmParams, int, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    transition = TransitionModel(doc["p_stay"], np.asarray(doc["initial"]))
    params = MsmParams(
        np.asarray(doc["beta1"]),
        np.asarray(doc["beta2"]),
        doc["sigma2"][0],
        doc["sigma2"][1],
        transition,
    )
    return params, int(doc["lag_count"]), str(doc["direction"])


# ---------------------------------------------------------------------------
# Estimator wrapper
# ---------------------------------------------------------------------------


class MarkovSwitchingDecoder(BaseEstimator):
    """Sample-level attention decoder fitted by EM on the recording itself.

    The estimator embeds the EEG with ``n_lags`` temporal lags, forms the
    envelope difference and fits the two-state switching regression. No
    attention labels are used; fitting is transductive, so the decoded
    states for the fitted recording are available right after ``fit``.

    Parameters
    ----------
    n_lags : int
        Temporal lags per channel (6 lags at 10 Hz span 0-500 ms).
    lag_direction : {"future", "past"}
        Whether lags look forward from the envelope sample (default) or
        backward.
    p_stay : float
        Self-transition probability per sample; controls temporal
        smoothness of the decoded states.
    max_iter, tol, ridge : EM controls, see :func:`fit_em`.
    update_transition : bool
        Re-estimate the (tied) self-transition probability during EM.
    normalize_envelopes : bool
        Z-score each envelope over the recording before differencing.
        The model assumes comparably scaled envelopes; disable only when
        the inputs are already normalized.
    init_decoder, init_mse : optional pretrained decoder and its training
        mean squared error; when absent a seeded random direction is used
        and label alignment is up to the caller.
    fs_hz : float
        Sampling rate assumed for bare-array inputs.
    random_state : int
        Seed for the unsupervised fallback initialization.
    """

    def __init__(
        self,
        n_lags: int = 6,
        lag_direction: str = "future",
        p_stay: float = 1.0 - 1e-4,
        max_iter: int = 100,
        tol: float = 1e-6,
        ridge: float | None = None,
        update_transition: bool = False,
        normalize_envelopes: bool = True,
        init_decoder=None,
        init_mse: float | None = None,
        fs_hz: float = 10.0,
        random_state: int = 0,
    ):
        self.n_lags = n_lags
        self.lag_direction = lag_direction
        self.p_stay = p_stay
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge
        self.update_transition = update_transition
        self.normalize_envelopes = normalize_envelopes
        self.init_decoder = init_decoder
        self.init_mse = init_mse
        self.fs_hz = fs_hz
        self.random_state = random_state

    def fit(self, X, y):
        """Fit on one recording.

        X is the EEG, (T, C) array or MultichannelSeries; y holds the two
        candidate envelopes as a (T, 2) array or a pair of single-channel
        series.
        """
        design, obs = self._prepare(X, y)
        init = self._initial_params(design, obs)
        result = fit_em(
            design,
            obs,
            init,
            max_iter=self.max_iter,
            tol=self.tol,
            ridge=self.ridge,
            update_transition=self.update_transition,
        )
        self.n_features_in_ = design.n_features // self.n_lags
        self.design_offset_ = design.t_offset
        self.params_ = result.params
        self.posteriors_ = result.posteriors
        self.loglik_trace_ = result.loglik_trace
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self.states_ = decode(result.posteriors, fs_hz=self._rate(X))
        return self

    def predict(self, X=None, y=None, use_smoothed: bool = True) -> np.ndarray:
        """Decoded states, 1 or 2 per valid sample.

        Without arguments returns the states of the fitted recording;
        with a new recording runs inference under the fitted parameters
        (no refit).
        """
        self._check_fitted()
        if X is None:
            return decode(
                self.posteriors_, use_smoothed=use_smoothed, fs_hz=self.states_.fs_hz
            ).states
        post = self._infer(X, y)
        return decode(post, use_smoothed=use_smoothed, fs_hz=self._rate(X)).states

    def predict_proba(self, X=None, y=None, use_smoothed: bool = True) -> np.ndarray:
        """Per-sample state posteriors, (T_valid, 2)."""
        self._check_fitted()
        post = self.posteriors_ if X is None else self._infer(X, y)
        if use_smoothed:
            return post.smoothed
        return post.filtered

    def score(self, X=None, y=None) -> float:
        """Total observed-data log-likelihood."""
        self._check_fitted()
        post = self.posteriors_ if X is None else self._infer(X, y)
        return post.loglik

    # -- internals ----------------------------------------------------

    def _transition(self) -> TransitionModel:
        return TransitionModel(self.p_stay)

    def _rate(self, X) -> float:
        return X.fs_hz if isinstance(X, MultichannelSeries) else float(self.fs_hz)

    def _prepare(self, X, y) -> tuple[LaggedDesign, np.ndarray]:
        eeg = X if isinstance(X, MultichannelSeries) else MultichannelSeries(
            np.asarray(X, dtype=np.float64), self.fs_hz
        )
        env1, env2 = split_envelope_pair(y, eeg.fs_hz, eeg.n_samples)
        if self.normalize_envelopes:
            env1, env2 = env1.zscored(), env2.zscored()
        design = lag_embed(eeg, self.n_lags, self.lag_direction)
        return design, difference_observation(env1, env2, design)

    def _initial_params(self, design: LaggedDesign, obs: np.ndarray) -> MsmParams:
        transition = self._transition()
        if self.init_decoder is not None:
            beta = as_float_vector(self.init_decoder, "init_decoder")
            if beta.size != design.n_features:
                raise ValueError(
                    f"init_decoder has length {beta.size}, design has "
                    f"{design.n_features} columns"
                )
            mse = self.init_mse if self.init_mse is not None else float(np.var(obs))
            return init_from_pretrained(beta, mse, transition)
        rng = np.random.default_rng(self.random_state)
        beta = rng.standard_normal(design.n_features)
        beta /= np.linalg.norm(beta)
        return init_from_pretrained(beta, float(np.var(obs)), transition)

    def _infer(self, X, y) -> PosteriorSequence:
        if y is None:
            raise ValueError("inference on a new recording needs both EEG and envelopes")
        design, obs = self._prepare(X, y)
        em = emission_loglik(obs, design, self.params_)
        return backward_smooth(forward_pass(em, self.params_.transition),
                               self.params_.transition)

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise ValueError("this MarkovSwitchingDecoder instance is not fitted yet")
