"""From BiG-AMP soft output to identified users and payload bits.

Each recovered row is gain corrected and thresholded. All rows are then
matched to users in one joint assignment before hard decision and demapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .codebook import Constellation, nearest_index
from .model import FrameLayout, SystemConfig
from .txframe import UserSignature, build_symbol_label


_HUGE = 1e100


class UnidentifiableUser(ValueError):
    """The row has no entry left after thresholding."""


@dataclass(frozen=True)
class DetectorOptions:
    # None means amplitude / 2, resolved against the constellation at use.
    tau: Optional[float] = None
    # False: blind gain per row, rotation resolved with label and signature.
    # True: threshold, then divide by the first surviving entry.
    literal_first_nonzero: bool = False

    def resolve_tau(self, c: Constellation) -> float:
        tau = c.amplitude / 2 if self.tau is None else float(self.tau)
        if not 0 < tau < c.amplitude:
            raise ValueError(f"tau must lie in (0, {c.amplitude}), got {tau}")
        return tau


@dataclass(eq=False)
class DetectionResult:
    assignment: np.ndarray  # assignment[row] = user id
    phase: np.ndarray  # per user
    symbols: np.ndarray  # (N, K*I), user order
    bits: list  # per user
    id_success: np.ndarray  # per user
    flagged_blocks: np.ndarray = field(default_factory=lambda: np.zeros(0, int))  # per user
    costs: np.ndarray = field(default_factory=lambda: np.zeros(0))  # per user


def threshold_row(row, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError("tau must be positive")
    row = np.asarray(row, dtype=complex)
    return np.where(np.abs(row) >= tau, row, 0)


def phase_correct(row, x_0: complex, label=None):
    """Return (phi, phi * row) with phi = x_0 / reference.

    The reference is ``label`` (the soft label-slot value) when given and
    nonzero, else the first nonzero entry of ``row``.
    """
    row = np.asarray(row, dtype=complex)
    if label is not None and abs(label) > 1e-9 * abs(x_0):
        ref = complex(label)
    else:
        nz = np.flatnonzero(row)
        if nz.size == 0:
            raise UnidentifiableUser("all-zero row after thresholding")
        ref = row[nz[0]]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        phi = x_0 / ref
        out = phi * row
    if not (np.isfinite(phi) and np.all(np.isfinite(out))):
        if label is not None:
            return phase_correct(row, x_0)
        raise UnidentifiableUser("phase reference too small")
    return phi, out


def signature_costs(corrected_rows, signatures: Sequence[UserSignature], layout: FrameLayout) -> np.ndarray:
    """(rows, users) squared distances between signature spans and signatures."""
    spans = np.asarray(corrected_rows)[:, layout.signature_span]
    S = np.array([s.symbols for s in signatures])
    with np.errstate(over="ignore", invalid="ignore"):
        cost = np.sum(np.abs(spans[:, None, :] - S[None, :, :]) ** 2, axis=-1)
    # Keep the assignment solvable when a row blew up.
    return np.nan_to_num(cost, nan=_HUGE, posinf=_HUGE)


def match_users(
    corrected_rows,
    signatures: Sequence[UserSignature],
    layout: FrameLayout,
    amplitude: float,
    d_f: int,
):
    """Minimum-cost perfect assignment of rows to users.

    Returns (assignment, id_success, cost) with assignment[row] = user and the
    last two indexed by user. A user counts as identified when its matched
    cost is below d_f * amplitude**2 / 4.
    """
    rows = np.asarray(corrected_rows)
    if rows.shape[0] != len(signatures):
        raise ValueError(f"{rows.shape[0]} rows for {len(signatures)} signatures")
    cost = signature_costs(rows, signatures, layout)
    r, u = linear_sum_assignment(cost)
    assignment = np.empty(len(r), dtype=int)
    assignment[r] = u
    user_cost = np.empty(len(u))
    user_cost[u] = cost[r, u]
    degenerate = ~np.any(rows[:, layout.signature_span] != 0, axis=1)
    ok = user_cost < d_f * amplitude**2 / 4
    ok[assignment[degenerate]] = False
    return assignment, ok, user_cost


def hard_decision(row, c: Constellation) -> np.ndarray:
    row = np.asarray(row, dtype=complex)
    out = c.points[nearest_index(row, c)]
    return np.where(row != 0, out, 0)


def demodulate(symbols, soft, c: Constellation, K: int, d_f: int):
    """Bits of a hard-decided data span, block by block.

    ``soft`` is the phase-corrected span before thresholding; blocks whose
    nonzero count is not d_f fall back to its d_f largest entries. Returns
    (bits, flagged block count).
    """
    S = np.asarray(symbols, dtype=complex).reshape(-1, K)
    soft = np.asarray(soft, dtype=complex).reshape(-1, K)
    nz = S != 0
    bad = nz.sum(axis=1) != d_f
    picks = np.sort(np.argsort(-np.abs(soft), axis=1, kind="stable")[:, :d_f], axis=1)
    # Good blocks: the nonzero positions in ascending order.
    good_pos = np.argsort(~nz, axis=1, kind="stable")[:, :d_f]
    pos = np.where(bad[:, None], picks, good_pos)
    chosen = np.where(
        bad[:, None],
        c.points[nearest_index(np.take_along_axis(soft, pos, axis=1), c)],
        np.take_along_axis(S, pos, axis=1),
    )
    idx = nearest_index(chosen, c)
    return c.label_bits[idx].ravel(), int(bad.sum())


def blind_gain(row, c: Constellation, n_active: int) -> complex:
    """Complex row gain g with row ~ g * x, up to a rotation by 2*pi/M.

    The magnitude is the median of the ``n_active`` largest entries over the
    amplitude; the phase comes from their M-th power, which maps every
    constellation point to the same angle.
    """
    row = np.asarray(row, dtype=complex)
    mag = np.abs(row)
    top = np.argsort(-mag, kind="stable")[:n_active]
    scale = float(np.median(mag[top])) / c.amplitude
    if not (np.isfinite(scale) and scale > 0):
        raise UnidentifiableUser("row carries no energy")
    u = row[top] / c.points[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.sum(mag[top] * (u / np.abs(u)) ** c.M)
    if not np.isfinite(s) or s == 0:
        raise UnidentifiableUser("no phase information in row")
    return scale * np.exp(1j * np.angle(s) / c.M)


def label_estimate(Y, h_hat) -> np.ndarray:
    """Least-squares label column given the channel estimate."""
    return np.linalg.lstsq(np.asarray(h_hat), np.asarray(Y)[:, 0], rcond=None)[0]


def pilot_costs(base_rows, label_refs, signatures, layout: FrameLayout, x_0: complex, M: int):
    """Costs of every (row, user, rotation) over the known entries.

    ``base_rows`` are gain-corrected rows, ``label_refs`` their label values on
    the same scale. Returns (total, signature part, best rotation), each
    (rows, users), minimised over the M rotations.
    """
    rot = np.exp(-2j * np.pi * np.arange(M) / M)  # (M,)
    spans = np.asarray(base_rows)[:, layout.signature_span]
    S = np.array([s.symbols for s in signatures])
    with np.errstate(over="ignore", invalid="ignore"):
        sig = np.sum(np.abs(spans[:, None, None, :] * rot[None, None, :, None] - S[:, None, :][None]) ** 2, axis=-1)
        lab = np.abs(np.asarray(label_refs)[:, None] * rot[None, :] - x_0) ** 2  # (R, M)
    sig = np.nan_to_num(sig, nan=_HUGE, posinf=_HUGE)
    total = sig + np.nan_to_num(lab, nan=_HUGE, posinf=_HUGE)[:, None, :]
    k = np.argmin(total, axis=-1)
    pick = lambda a: np.take_along_axis(a, k[..., None], axis=-1)[..., 0]
    return pick(total), pick(sig), k


def _assign(total, sig, rows, layout, amplitude, d_f):
    r, u = linear_sum_assignment(total)
    assignment = np.empty(len(r), dtype=int)
    assignment[r] = u
    user_cost = np.empty(len(u))
    user_cost[u] = sig[r, u]
    degenerate = ~np.any(rows[:, layout.signature_span] != 0, axis=1)
    ok = user_cost < d_f * amplitude**2 / 4
    ok[assignment[degenerate]] = False
    return assignment, ok, user_cost


def _literal_rows(x_hat, x_0, tau):
    N = x_hat.shape[0]
    phi = np.zeros(N, dtype=complex)
    out = np.zeros_like(x_hat)
    for r in range(N):
        try:
            phi[r], out[r] = phase_correct(threshold_row(x_hat[r], tau), x_0)
        except UnidentifiableUser:
            pass
    return phi, out


def detect(
    x_hat: np.ndarray,
    cfg: SystemConfig,
    c: Constellation,
    signatures: Sequence[UserSignature],
    opts: DetectorOptions = DetectorOptions(),
    h_hat: Optional[np.ndarray] = None,
    Y: Optional[np.ndarray] = None,
) -> DetectionResult:
    """Run the whole chain on the (N, L) posterior mean matrix.

    By default each row's gain is estimated blindly up to an M-PSK rotation,
    and the rotation is chosen jointly with the user by matching the label and
    signature entries. The label values come from a least-squares fit of the
    first received column when ``h_hat`` and ``Y`` are given, else from
    ``x_hat``. The result is invariant to any nonzero complex gain per row.
    ``opts.literal_first_nonzero`` switches to threshold-then-divide.
    """
    x_hat = np.asarray(x_hat, dtype=complex)
    N = x_hat.shape[0]
    layout = cfg.layout
    tau = opts.resolve_tau(c)
    x_0 = build_symbol_label(c)

    if opts.literal_first_nonzero:
        row_phi, corrected = _literal_rows(x_hat, x_0, tau)
        assignment, id_success, cost = match_users(corrected, signatures, layout, c.amplitude, cfg.d_f)
    else:
        labels = x_hat[:, layout.label_index]
        if h_hat is not None and Y is not None:
            labels = label_estimate(Y, h_hat)
        n_active = 1 + cfg.d_f * (cfg.I + 1)
        gains = np.zeros(N, dtype=complex)
        for r in range(N):
            try:
                gains[r] = blind_gain(x_hat[r], c, n_active)
            except UnidentifiableUser:
                pass
        inv = np.divide(1, gains, out=np.zeros(N, complex), where=gains != 0)
        base = np.stack([threshold_row(inv[r] * x_hat[r], tau) for r in range(N)])
        total, sig, k = pilot_costs(base, inv * labels, signatures, layout, x_0, c.M)
        assignment, id_success, cost = _assign(total, sig, base, layout, c.amplitude, cfg.d_f)
        rows = np.arange(N)
        rot = np.exp(-2j * np.pi * k[rows, assignment] / c.M)
        row_phi = inv * rot
        corrected = base * rot[:, None]

    symbols = np.zeros((N, cfg.K * cfg.I), dtype=complex)
    phase = np.zeros(N, dtype=complex)
    flagged = np.zeros(N, dtype=int)
    bits: list = [None] * N
    for r in range(N):
        n = assignment[r]
        phase[n] = row_phi[r]
        symbols[n] = hard_decision(corrected[r, layout.data_span], c)
        soft = row_phi[r] * x_hat[r, layout.data_span]
        bits[n], flagged[n] = demodulate(symbols[n], soft, c, cfg.K, cfg.d_f)
    return DetectionResult(assignment, phase, symbols, bits, id_success, flagged, cost)
