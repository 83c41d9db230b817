"""BiG-AMP estimation of the channel H and the sparse frame matrix X from Y = HX + Z.

Row labels R1..R16 in comments follow the usual BiG-AMP recursion: plug-in
output moments (R1-R3), Onsager correction (R4), AWGN output step (R5-R8),
pseudo-measurements for H and X (R9-R12) and the two prior denoisers (R13-R16).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .channel import complex_normal
from .codebook import Constellation

log = logging.getLogger(__name__)

INIT_MODES = ("prior", "clustered")
OBJECTIVES = ("surrogate", "bethe")


class BigAmpDiverged(ArithmeticError):
    def __init__(self, iteration: int, what: str = ""):
        super().__init__(f"BiG-AMP produced non-finite values at iteration {iteration} {what}".strip())
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class Priors:
    """Receiver-side knowledge: symbol prior, channel prior variance and noise level."""

    gamma: float
    constellation: Constellation
    beta_bar: float
    sigma2: float

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.constellation.M == 0:
            raise ValueError("empty constellation")

    @property
    def support(self) -> np.ndarray:
        """The finite support {0} U C of the symbol prior."""
        return np.concatenate([[0.0], self.constellation.points])

    @property
    def weights(self) -> np.ndarray:
        M = self.constellation.M
        return np.concatenate([[1 - self.gamma], np.full(M, self.gamma / M)])

    @property
    def mean(self) -> complex:
        return complex(np.sum(self.weights * self.support))

    @property
    def variance(self) -> float:
        return float(np.sum(self.weights * np.abs(self.support - self.mean) ** 2))


@dataclass(frozen=True)
class BigAmpOptions:
    t_max: int = 200
    tau_stop: float = 1e-8
    damp: float = 0.5
    damp_adapt: bool = True
    damp_min: float = 0.05
    damp_max: float = 1.0
    variance_floor: float = 1e-12
    strict_paper_variances: bool = True
    objective: str = "surrogate"
    clip_gains: bool = True
    init: str = "clustered"
    init_jitter: float = 0.01
    max_starts: int = 10
    damp_window: int = 5
    fit_slack: float = 2.0

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.tau_stop > 0:
            raise ValueError("tau_stop must be positive")
        if not 0 < self.damp <= 1:
            raise ValueError("damp must lie in (0, 1]")
        if not 0 < self.damp_min <= self.damp_max <= 1:
            raise ValueError("need 0 < damp_min <= damp_max <= 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.max_starts < 1:
            raise ValueError("max_starts must be >= 1")
        if self.damp_window < 1:
            raise ValueError("damp_window must be >= 1")


@dataclass(eq=False)
class _Checkpoint:
    """Last accepted iterate plus the undamped step proposed from it."""

    h_hat: np.ndarray
    v_h: np.ndarray
    x_hat: np.ndarray
    v_x: np.ndarray
    w_bar: np.ndarray
    v_w_bar: np.ndarray
    v_w: np.ndarray
    w_hat: np.ndarray
    z_hat: np.ndarray
    v_z: np.ndarray
    s_new: np.ndarray
    v_s_new: np.ndarray
    s_base: np.ndarray
    v_s_base: np.ndarray
    h_base: np.ndarray
    x_base: np.ndarray
    objective: float
    history: tuple = ()


@dataclass(eq=False)
class BigAmpState:
    h_hat: np.ndarray
    v_h: np.ndarray
    x_hat: np.ndarray
    v_x: np.ndarray
    s_hat: np.ndarray
    v_s: Optional[np.ndarray] = None
    h_bar: Optional[np.ndarray] = None
    x_bar: Optional[np.ndarray] = None
    w_bar: Optional[np.ndarray] = None
    v_w_bar: Optional[np.ndarray] = None
    v_w: Optional[np.ndarray] = None
    w_hat: Optional[np.ndarray] = None
    z_hat: Optional[np.ndarray] = None
    v_z: Optional[np.ndarray] = None
    q_hat: Optional[np.ndarray] = None
    v_q: Optional[np.ndarray] = None
    r_hat: Optional[np.ndarray] = None
    v_r: Optional[np.ndarray] = None
    iter: int = 0
    damp: float = 1.0
    accepted: bool = True
    residual_change: float = np.inf
    kl_in: float = 0.0
    checkpoint: Optional[_Checkpoint] = None


@dataclass(eq=False)
class BigAmpResult:
    h_hat: np.ndarray
    v_h: np.ndarray
    x_hat: np.ndarray
    v_x: np.ndarray
    iters: int
    converged: bool
    failed: bool = False
    starts: int = 1
    fit_residual: float = np.nan
    trace: list = dataclasses.field(default_factory=list)


# -- denoisers ---------------------------------------------------------------


def gaussian_posterior(q_hat, v_q, beta_bar: float):
    """Posterior of h ~ CN(0, beta_bar) given the pseudo-measurement CN(q_hat, v_q)."""
    q_hat = np.asarray(q_hat)
    v_q = np.asarray(v_q, dtype=float)
    if np.isinf(beta_bar):
        return q_hat.copy(), v_q.copy()
    g = beta_bar / (beta_bar + v_q)
    return g * q_hat, g * v_q


def _gaussian_kl(mean, var, beta_bar: float) -> float:
    """KL(CN(mean, var) || CN(0, beta_bar)), summed."""
    return float(np.sum(np.log(beta_bar / var) + (var + np.abs(mean) ** 2) / beta_bar - 1))


def _discrete_weights(r_hat, v_r, p: Priors):
    a = p.support
    r = np.asarray(r_hat, dtype=complex)[..., None]
    v = np.asarray(v_r, dtype=float)[..., None]
    logw = np.log(p.weights) - np.abs(r - a) ** 2 / v
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    return a, w


def discrete_posterior(r_hat, v_r, p: Priors):
    """Posterior mean and variance of x over {0} U C given CN(r_hat, v_r)."""
    a, w = _discrete_weights(r_hat, v_r, p)
    mean = w @ a
    var = np.einsum("...k,...k->...", w, np.abs(a - mean[..., None]) ** 2)
    return mean, var


def _discrete_posterior_kl(r_hat, v_r, p: Priors):
    a, w = _discrete_weights(r_hat, v_r, p)
    mean = w @ a
    var = np.einsum("...k,...k->...", w, np.abs(a - mean[..., None]) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * (np.log(w) - np.log(p.weights)), 0.0)
    return mean, var, float(terms.sum())


# -- initialisation ----------------------------------------------------------


def initialize(
    Y: np.ndarray,
    p: Priors,
    o: BigAmpOptions,
    rng: np.random.Generator,
    N: Optional[int] = None,
    mode: Optional[str] = None,
) -> BigAmpState:
    """Starting point for one run.

    ``mode`` "prior": channel drawn from CN(0, beta_bar), symbols at the prior
    mean plus a small jitter. "clustered": channel from
    :func:`clustered_channel_estimate` and symbols from the denoised
    zero-forcing estimate.

    The prior mean of a symmetric constellation is 0, which would zero the
    first pseudo-measurement precisions, hence the jitter.
    """
    Y = np.asarray(Y)
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite values")
    J, L = Y.shape
    N = J if N is None else N
    amp = p.constellation.amplitude
    v_h = np.full((J, N), float(p.beta_bar))
    if (mode or o.init) == "clustered":
        h_hat = clustered_channel_estimate(Y, N, amp, rng)
        x_hat, v_x = _least_squares_symbols(Y, h_hat, p)
    else:
        h_hat = complex_normal(rng, (J, N), p.beta_bar)
        x_hat = p.mean + o.init_jitter * amp * np.exp(2j * np.pi * rng.random((N, L)))
        v_x = np.full((N, L), p.variance)
    return BigAmpState(
        h_hat=h_hat,
        v_h=v_h,
        x_hat=x_hat,
        v_x=np.maximum(v_x, o.variance_floor),
        s_hat=np.zeros((J, L), dtype=complex),
        damp=o.damp,
    )


def _least_squares_symbols(Y, H, p: Priors):
    """Denoise the zero-forcing estimate pinv(H) Y with the symbol prior."""
    G = np.linalg.pinv(H)
    r = G @ Y
    # Per-row noise of zero forcing, plus a little so a poor H is not trusted blindly.
    v = np.maximum(p.sigma2, 1e-3 * p.variance) * np.sum(np.abs(G) ** 2, axis=1)
    return discrete_posterior(r, np.broadcast_to(v[:, None], r.shape), p)


def clustered_channel_estimate(
    Y: np.ndarray,
    N: int,
    amplitude: float,
    rng: np.random.Generator,
    coherence: float = 0.97,
    max_columns: int = 4000,
) -> np.ndarray:
    """Estimate H from received columns that carry a single user.

    A column with one nonzero symbol is a scaled copy of one channel column, so
    such columns bunch up along N directions. Picks the N densest bunches
    greedily and takes each bunch's principal direction.
    """
    J, L = Y.shape
    norms = np.linalg.norm(Y, axis=0)
    cols = np.flatnonzero(norms > 0)
    if cols.size > max_columns:
        cols = np.sort(rng.choice(cols, max_columns, replace=False))
    U = Y[:, cols] / norms[cols]
    near = np.abs(U.conj().T @ U) >= coherence
    alive = np.ones(cols.size, dtype=bool)
    H = np.empty((J, N), dtype=complex)
    for n in range(N):
        if not alive.any():
            H[:, n:] = complex_normal(rng, (J, N - n))
            break
        counts = near[:, alive].sum(axis=1) * alive
        members = near[np.argmax(counts)] & alive
        block = Y[:, cols[members]]
        u = np.linalg.svd(block, full_matrices=False)[0][:, 0]
        H[:, n] = u * np.median(np.abs(u.conj() @ block)) / amplitude
        alive &= np.abs(u.conj() @ U) < coherence
    return H


# -- one pass ----------------------------------------------------------------


def _objective(Y, w_bar, v_w_bar, w_hat, v_w, kl_in, p: Priors, o: BigAmpOptions) -> float:
    if o.objective == "bethe":
        s2 = max(p.sigma2, o.variance_floor)
        return kl_in + float(np.sum((np.abs(Y - w_bar) ** 2 + v_w_bar) / s2))
    return float(np.sum(np.abs(Y - w_hat) ** 2 / v_w))


def iterate(state: BigAmpState, Y: np.ndarray, p: Priors, o: BigAmpOptions) -> BigAmpState:
    """One BiG-AMP pass with damping.

    With adaptive damping a step whose objective exceeds the worst of the last
    ``damp_window`` accepted objectives is retried from the last accepted
    iterate with half the damping.
    """
    fl = o.variance_floor
    s2 = max(p.sigma2, fl)
    h, v_h, x, v_x = state.h_hat, state.v_h, state.x_hat, state.v_x
    ck = state.checkpoint
    damp = state.damp

    abs_h2 = np.abs(h) ** 2
    abs_x2 = np.abs(x) ** 2
    v_w_bar = abs_h2 @ v_x + v_h @ abs_x2  # R1
    w_bar = h @ x  # R2
    v_w = v_w_bar + v_h @ v_x  # R3
    if ck is not None:
        v_w_bar = damp * v_w_bar + (1 - damp) * ck.v_w_bar
        v_w = damp * v_w + (1 - damp) * ck.v_w
    v_w_bar = np.maximum(v_w_bar, fl)
    v_w = np.maximum(v_w, fl)
    w_hat = w_bar - state.s_hat * v_w_bar  # R4

    obj = _objective(Y, w_bar, v_w_bar, w_hat, v_w, state.kl_in, p, o)
    reject = (
        ck is not None
        and o.damp_adapt
        and not obj <= max(ck.history)
        and damp > o.damp_min
    )
    residual_change = np.inf
    if reject:
        damp = max(damp * 0.5, o.damp_min)
    else:
        v_z = v_w_bar * s2 / (v_w_bar + s2)  # R5
        z_hat = v_w_bar * (Y - w_hat) / (v_w_bar + s2) + w_hat  # R6
        if o.strict_paper_variances:
            v_s_new = (1 - v_z / v_w) / v_w  # R7
        else:
            v_s_new = (1 - v_z / v_w_bar) / v_w_bar
        s_new = (z_hat - w_hat) / v_w_bar  # R8
        if ck is None:
            bases = (s_new, v_s_new, h, x)
        else:
            bases = (state.s_hat, state.v_s, state.h_bar, state.x_bar)
            residual_change = float(
                np.sum(np.abs(w_bar - ck.w_bar) ** 2) / max(np.sum(np.abs(ck.w_bar) ** 2), 1e-300)
            )
            if o.damp_adapt:
                damp = min(damp * 1.1, o.damp_max)
        history = ((ck.history if ck is not None else ()) + (obj,))[-o.damp_window:]
        ck = _Checkpoint(
            h, v_h, x, v_x, w_bar, v_w_bar, v_w, w_hat, z_hat, v_z, s_new, v_s_new, *bases, obj, history
        )

    s_hat = damp * ck.s_new + (1 - damp) * ck.s_base
    v_s = np.maximum(damp * ck.v_s_new + (1 - damp) * ck.v_s_base, fl)
    h_bar = damp * ck.h_hat + (1 - damp) * ck.h_base
    x_bar = damp * ck.x_hat + (1 - damp) * ck.x_base

    v_q = 1 / np.maximum(v_s @ (np.abs(x_bar) ** 2).T, fl)  # R9
    gain_q = 1 - v_q * (v_s @ ck.v_x.T)
    v_r = 1 / np.maximum((np.abs(h_bar) ** 2).T @ v_s, fl)  # R11
    gain_r = 1 - v_r * (ck.v_h.T @ v_s)
    if o.clip_gains:
        gain_q = np.clip(gain_q, 0, 1)
        gain_r = np.clip(gain_r, 0, 1)
    q_hat = h_bar * gain_q + v_q * (s_hat @ x_bar.conj().T)  # R10
    r_hat = x_bar * gain_r + v_r * (h_bar.conj().T @ s_hat)  # R12

    h_new, v_h_new = gaussian_posterior(q_hat, v_q, p.beta_bar)  # R13-R14
    if o.objective == "bethe":
        x_new, v_x_new, kl_x = _discrete_posterior_kl(r_hat, v_r, p)  # R15-R16
        kl_in = kl_x + _gaussian_kl(h_new, np.maximum(v_h_new, fl), p.beta_bar)
    else:
        x_new, v_x_new = discrete_posterior(r_hat, v_r, p)  # R15-R16
        kl_in = 0.0
    t = state.iter + 1
    if not (np.all(np.isfinite(h_new)) and np.all(np.isfinite(x_new)) and np.isfinite(obj)):
        raise BigAmpDiverged(t)

    return BigAmpState(
        h_hat=h_new,
        v_h=np.maximum(v_h_new, fl),
        x_hat=x_new,
        v_x=np.maximum(v_x_new, fl),
        s_hat=s_hat,
        v_s=v_s,
        h_bar=h_bar,
        x_bar=x_bar,
        w_bar=ck.w_bar,
        v_w_bar=ck.v_w_bar,
        v_w=ck.v_w,
        w_hat=ck.w_hat,
        z_hat=ck.z_hat,
        v_z=ck.v_z,
        q_hat=q_hat,
        v_q=v_q,
        r_hat=r_hat,
        v_r=v_r,
        iter=t,
        damp=damp,
        accepted=not reject,
        residual_change=residual_change,
        kl_in=kl_in,
        checkpoint=ck,
    )


# -- driver ------------------------------------------------------------------


def fit_residual(Y, h_hat, x_hat) -> float:
    return float(np.sum(np.abs(Y - h_hat @ x_hat) ** 2))


def _single_run(Y, p, o, state, trace):
    converged = False
    for _ in range(o.t_max):
        prev_x = state.x_hat
        state = iterate(state, Y, p, o)
        if trace is not None:
            trace.append(
                (state.iter, state.residual_change, state.damp, float(np.mean(np.abs(state.x_hat - prev_x))))
            )
        if state.accepted and state.residual_change < o.tau_stop:
            converged = True
            break
    # The checkpoint holds the last accepted posteriors.
    return state, converged


def run(
    Y: np.ndarray,
    p: Priors,
    o: BigAmpOptions,
    rng: np.random.Generator,
    N: Optional[int] = None,
    init_state: Optional[BigAmpState] = None,
    trace: Optional[list] = None,
) -> BigAmpResult:
    """Iterate until the relative change of w_bar drops below tau_stop or t_max.

    Up to ``max_starts`` initialisations are tried while the fit
    ||Y - H X||^2 stays above ``fit_slack`` times its expected noise energy;
    the best fit wins. Only the first start uses ``o.init``, later ones draw
    the channel from its prior. The first divergence earns one extra start,
    a second one ends the run.
    """
    Y = np.asarray(Y)
    J, L = Y.shape
    noise_energy = J * L * max(p.sigma2, o.variance_floor)
    budget = o.max_starts
    divergence_retry = True
    best: Optional[BigAmpResult] = None
    total_iters = 0
    start = 0
    while start < budget:
        start += 1
        state = init_state if (init_state is not None and start == 1) else initialize(
            Y, p, o, rng, N, mode=None if start == 1 else "prior"
        )
        run_trace = [] if trace is not None else None
        try:
            state, converged = _single_run(Y, p, o, state, run_trace)
        except BigAmpDiverged as e:
            log.warning("start %d diverged at iteration %d", start, e.iteration)
            total_iters += e.iteration
            if not divergence_retry:
                break
            divergence_retry = False
            budget += 1
            continue
        total_iters += state.iter
        if trace is not None:
            trace.extend(run_trace)
        res = fit_residual(Y, state.h_hat, state.x_hat)
        result = BigAmpResult(
            state.h_hat, state.v_h, state.x_hat, state.v_x,
            iters=total_iters, converged=converged, starts=start, fit_residual=res,
        )
        if best is None or res < best.fit_residual:
            best = result
        if res <= o.fit_slack * noise_energy:
            break
    if best is None:
        N = J if N is None else N
        return BigAmpResult(
            np.zeros((J, N), complex), np.full((J, N), np.inf),
            np.zeros((N, L), complex), np.full((N, L), np.inf),
            iters=total_iters, converged=False, failed=True, starts=start,
        )
    best.iters = total_iters
    best.starts = start
    return best


def genie_state(H: np.ndarray, X: np.ndarray, o: BigAmpOptions) -> BigAmpState:
    """State sitting at a known (H, X) with floor variances."""
    fl = o.variance_floor
    return BigAmpState(
        h_hat=np.array(H, dtype=complex),
        v_h=np.full(H.shape, fl),
        x_hat=np.array(X, dtype=complex),
        v_x=np.full(X.shape, fl),
        s_hat=np.zeros((H.shape[0], X.shape[1]), dtype=complex),
        damp=o.damp,
    )
