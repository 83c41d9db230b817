"""Monte-Carlo driver: single trials, (gamma, SNR) sweeps, a brute-force ML
oracle and the CSV/JSON artifacts."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .bigamp import BigAmpOptions, Priors, run as run_bigamp
from .channel import apply_channel, draw_channel, snr_to_sigma2
from .codebook import Constellation, build_constellation, symbols_to_bits
from .detector import DetectionResult, DetectorOptions, detect
from .model import ConfigError, SystemConfig, from_sparsity, validate_config
from .txframe import UserSignature, build_signal_matrix, build_signatures, build_symbol_label

CSV_HEADER = (
    "gamma", "K", "N", "J", "I", "snr_db", "trials",
    "ber", "ci95", "id_error_rate", "mean_iters", "runtime_s",
)
RUNTIME_COLUMNS = ("runtime_s",)
ORACLE_LIMIT = 10**6
# Noise level the receiver assumes when the channel is noiseless.
NOISELESS_SIGMA2 = 1e-8


@dataclass
class TrialResult:
    ber: float
    id_error_rate: float
    iters: int
    converged: bool
    seed: int
    failed: bool = False
    bit_errors: int = 0
    n_bits: int = 0
    flagged_blocks: int = 0
    per_user_ber: list = field(default_factory=list)
    assignment: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    runtime_s: float = 0.0

    def debug_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PointResult:
    gamma: float
    K: int
    N: int
    J: int
    I: int
    snr_db: float
    trials: int
    ber: float
    ci95: float
    id_error_rate: float
    mean_iters: float
    runtime_s: float
    converged_rate: float = math.nan
    trial_results: list = field(default_factory=list, repr=False)

    def row(self) -> list[str]:
        return [_fmt(getattr(self, k)) for k in CSV_HEADER]


@dataclass
class SweepResult:
    points: list[PointResult]
    metadata: dict

    @property
    def grid(self) -> list[tuple[float, float]]:
        return [(p.gamma, p.snr_db) for p in self.points]


@dataclass
class TrialArtifacts:
    """Everything a trial produced, for debug dumps and tests."""

    cfg: SystemConfig
    constellation: Constellation
    signatures: list
    X: np.ndarray
    H: np.ndarray
    Y: np.ndarray
    payloads: list
    x_hat: np.ndarray
    h_hat: np.ndarray
    detection: Optional[DetectionResult]
    trace: Optional[list]


def _fmt(v) -> str:
    # repr round-trips floats exactly.
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# -- a single trial ----------------------------------------------------------


def run_trial(
    cfg: SystemConfig,
    snr_db: float,
    seed: int,
    bigamp_opts: BigAmpOptions = BigAmpOptions(),
    detector_opts: DetectorOptions = DetectorOptions(),
    trace: Optional[list] = None,
    keep: bool = False,
):
    """One end-to-end trial.

    ``snr_db=None`` runs noiseless; the receiver then assumes
    NOISELESS_SIGMA2 as noise level. Returns a TrialResult, or (TrialResult, TrialArtifacts)
    when ``keep`` is set.
    """
    t0 = time.perf_counter()
    validate_config(cfg)
    c = build_constellation(cfg.M, cfg.P, cfg.gamma)
    signatures = build_signatures(cfg, c)
    ss_payload, ss_frame, ss_channel, ss_noise, ss_rx = np.random.SeedSequence(seed).spawn(5)

    rng = np.random.default_rng(ss_payload)
    payloads = [rng.integers(0, 2, cfg.payload_bits, dtype=np.int8) for _ in range(cfg.N)]
    X = build_signal_matrix(payloads, cfg, c, np.random.default_rng(ss_frame), signatures).entries
    ch = draw_channel(cfg, np.random.default_rng(ss_channel))
    if snr_db is None:
        sigma2_tx, sigma2_rx = 0.0, NOISELESS_SIGMA2
    else:
        sigma2_tx = sigma2_rx = snr_to_sigma2(snr_db, cfg.P)
    Y = apply_channel(ch, X, sigma2_tx, np.random.default_rng(ss_noise)).Y

    priors = Priors(cfg.gamma, c, cfg.beta_bar, sigma2_rx)
    est = run_bigamp(Y, priors, bigamp_opts, np.random.default_rng(ss_rx), N=cfg.N, trace=trace)

    n_bits = cfg.N * cfg.payload_bits
    det = None
    if est.failed:
        result = TrialResult(
            ber=1.0, id_error_rate=1.0, iters=est.iters, converged=False, seed=int(seed),
            failed=True, bit_errors=n_bits, n_bits=n_bits, per_user_ber=[1.0] * cfg.N,
        )
    else:
        det = detect(est.x_hat, cfg, c, signatures, detector_opts, h_hat=est.h_hat, Y=Y)
        per_user = []
        errors = 0
        for n in range(cfg.N):
            if det.id_success[n]:
                e = int(np.count_nonzero(det.bits[n] != payloads[n]))
            else:
                e = cfg.payload_bits  # misidentified: every bit counts as wrong
            errors += e
            per_user.append(e / cfg.payload_bits)
        result = TrialResult(
            ber=errors / n_bits,
            id_error_rate=float(np.mean(~det.id_success)),
            iters=est.iters,
            converged=bool(est.converged),
            seed=int(seed),
            bit_errors=errors,
            n_bits=n_bits,
            flagged_blocks=int(det.flagged_blocks.sum()),
            per_user_ber=per_user,
            assignment=[int(a) for a in det.assignment],
            phases=[[float(p.real), float(p.imag)] for p in det.phase],
        )
    result.runtime_s = time.perf_counter() - t0
    if not keep:
        return result
    return result, TrialArtifacts(cfg, c, signatures, X, ch.H, Y, payloads, est.x_hat, est.h_hat, det, trace)


# -- sweeps ------------------------------------------------------------------


def trial_seed(master_seed: int, gamma_index: int, snr_index: int, trial: int) -> int:
    """Counter-based seed: the grid coordinates and trial index are the spawn key."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(gamma_index, snr_index, trial))
    return int(ss.generate_state(1, np.uint64)[0])


def config_for_gamma(template: SystemConfig, gamma: Optional[float]) -> SystemConfig:
    """Template with K and N rescaled to ``gamma``; J follows N."""
    if gamma is None:
        return validate_config(template)
    if template.d_v is None:
        raise ConfigError("sweeping gamma needs d_v in the template")
    return from_sparsity(
        template.d_f, template.d_v, gamma, template.I,
        M=template.M, P=template.P, support_mode=template.support_mode,
        signature_seed=template.signature_seed,
    )


def _job(args):
    cfg, snr_db, seed, bo, do = args
    return run_trial(cfg, snr_db, seed, bo, do)


def _aggregate(cfg, snr_db, results: list[TrialResult]) -> PointResult:
    bers = np.array([r.ber for r in results])
    n = len(results)
    ci = 1.96 * float(np.std(bers, ddof=1)) / math.sqrt(n) if n > 1 else math.nan
    return PointResult(
        gamma=cfg.gamma, K=cfg.K, N=cfg.N, J=cfg.J, I=cfg.I,
        snr_db=math.nan if snr_db is None else float(snr_db),
        trials=n,
        ber=float(np.mean(bers)),
        ci95=ci,
        id_error_rate=float(np.mean([r.id_error_rate for r in results])),
        mean_iters=float(np.mean([r.iters for r in results])),
        runtime_s=float(sum(r.runtime_s for r in results)),
        converged_rate=float(np.mean([r.converged for r in results])),
        trial_results=results,
    )


def sweep(
    cfg_template: SystemConfig,
    gammas: Optional[Sequence[float]],
    snrs_db: Sequence[Optional[float]],
    trials: int,
    parallelism: int = 1,
    master_seed: int = 0,
    bigamp_opts: BigAmpOptions = BigAmpOptions(),
    detector_opts: DetectorOptions = DetectorOptions(),
    progress=None,
) -> SweepResult:
    """Run ``trials`` trials at every (gamma, snr) point.

    ``gammas=None`` uses the template's own K and N. Results are reduced in
    trial order, so they do not depend on ``parallelism``.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    gamma_list = [None] if gammas is None else list(gammas)
    snr_list = list(snrs_db)
    if not gamma_list or not snr_list:
        raise ConfigError("empty gamma or SNR grid")
    cfgs = [config_for_gamma(cfg_template, g) for g in gamma_list]

    points = []
    pool = ProcessPoolExecutor(parallelism) if parallelism > 1 else None
    try:
        for gi, cfg in enumerate(cfgs):
            for si, snr in enumerate(snr_list):
                jobs = [
                    (cfg, snr, trial_seed(master_seed, gi, si, t), bigamp_opts, detector_opts)
                    for t in range(trials)
                ]
                results = list(pool.map(_job, jobs)) if pool else [_job(j) for j in jobs]
                point = _aggregate(cfg, snr, results)
                points.append(point)
                if progress is not None:
                    progress(point)
    finally:
        if pool is not None:
            pool.shutdown()
    meta = sweep_metadata(cfgs, snr_list, trials, master_seed, parallelism, bigamp_opts, detector_opts)
    return SweepResult(points, meta)


def sweep_metadata(cfgs, snrs, trials, master_seed, parallelism, bigamp_opts, detector_opts) -> dict:
    return {
        "software": "gfscma",
        "version": __version__,
        "master_seed": master_seed,
        "seeding": "SeedSequence(master_seed, spawn_key=(gamma_index, snr_index, trial))",
        "trials_per_point": trials,
        "parallelism": parallelism,
        "snr_db": [None if s is None else float(s) for s in snrs],
        "snr_definition": "sigma2 = P / 10**(snr_db/10)",
        "configs": [c.to_dict() for c in cfgs],
        "bigamp": dataclasses.asdict(bigamp_opts),
        "detector": {
            **dataclasses.asdict(detector_opts),
            "tau_default": "amplitude / 2",
            "row_gain": "blind magnitude and phase mod 2*pi/M, rotation chosen with the least-squares label and the signature",
            "assignment": "minimum-cost perfect matching on signature distances",
            "id_success": "matched cost < d_f * amplitude**2 / 4",
            "wrong_cardinality_blocks": "demap the d_f largest pre-threshold entries, flag the block",
        },
        "ber_policy": "misidentified users and failed runs count every payload bit as an error",
        "ci95": "1.96 * sample std / sqrt(trials)",
        "constellations": {
            repr(c.gamma): build_constellation(c.M, c.P, c.gamma).dump() for c in cfgs
        },
    }


# -- brute-force ML oracle ---------------------------------------------------


def enumerate_codewords(K: int, d_f: int, c: Constellation) -> np.ndarray:
    """Every valid K-entry codeword: a d_f-subset support times M**d_f values."""
    words = []
    for support in itertools.combinations(range(K), d_f):
        for vals in itertools.product(c.points, repeat=d_f):
            w = np.zeros(K, dtype=complex)
            w[list(support)] = vals
            words.append(w)
    return np.array(words)


def map_oracle(Y, H_true, cfg: SystemConfig, signatures: Optional[Sequence[UserSignature]] = None) -> np.ndarray:
    """Joint ML search per K-column block given the true channel.

    The label and signature columns are known and copied in; each data block
    is the argmin of ||Y_b - H X_b||^2 over all joint codeword choices.
    """
    Y = np.asarray(Y)
    H = np.asarray(H_true)
    c = build_constellation(cfg.M, cfg.P, cfg.gamma)
    words = enumerate_codewords(cfg.K, cfg.d_f, c)
    if cfg.N > 4 or len(words) ** cfg.N > ORACLE_LIMIT:
        raise ConfigError(f"instance too large for the oracle: {len(words)}**{cfg.N} candidates")
    if signatures is None:
        signatures = build_signatures(cfg, c)
    layout = cfg.layout
    X = np.zeros((cfg.N, cfg.L), dtype=complex)
    X[:, layout.label_index] = build_symbol_label(c)
    X[:, layout.signature_span] = [s.symbols for s in signatures]

    W = len(words)
    # contrib[n, w] = H[:, n] outer words[w], shape (N, W, J, K)
    contrib = H.T[:, None, :, None] * words[None, :, None, :]
    grid = itertools.product(range(W), repeat=max(cfg.N - 1, 0))
    heads = list(grid)
    start = layout.data_span.start
    for b in range(cfg.I):
        cols = slice(start + b * cfg.K, start + (b + 1) * cfg.K)
        Yb = Y[:, cols]
        best, best_combo = np.inf, None
        for head in heads:
            R = Yb - sum((contrib[n, w] for n, w in enumerate(head)), np.zeros_like(Yb))
            cost = np.sum(np.abs(R[None] - contrib[cfg.N - 1]) ** 2, axis=(1, 2))
            w = int(np.argmin(cost))
            if cost[w] < best:
                best, best_combo = cost[w], head + (w,)
        for n, w in enumerate(best_combo):
            X[n, cols] = words[w]
    return X


def payload_from_symbols(X, cfg: SystemConfig, c: Constellation) -> list[np.ndarray]:
    """Payload bits of every row of a valid symbol matrix."""
    out = []
    for row in np.asarray(X):
        data = row[cfg.layout.data_span].reshape(cfg.I, cfg.K)
        out.append(symbols_to_bits(data[data != 0], c))
    return out


# -- artifacts ---------------------------------------------------------------


def metadata_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def constellation_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".constellation.csv")


def emit_csv(result: SweepResult, path: str | Path) -> Path:
    """Write the aggregate CSV plus sibling metadata JSON and constellation CSV."""
    path = Path(path)
    if not result.points:
        raise ValueError("no grid points to write")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in result.points:
            w.writerow(p.row())
    metadata_path(path).write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n")
    with open(constellation_path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("gamma", "re", "im", "bits"))
        for g, triples in result.metadata.get("constellations", {}).items():
            for re_, im_, bits in triples:
                w.writerow((g, repr(re_), repr(im_), bits))
    return path


_INT_COLUMNS = {"K", "N", "J", "I", "trials"}


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: int(v) if k in _INT_COLUMNS else float(v) for k, v in r.items()} for r in rows]


def csv_body_without_runtime(path: str | Path) -> str:
    """The CSV text with the runtime columns dropped, for determinism checks."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [i for i, h in enumerate(rows[0]) if h not in RUNTIME_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows) + "\n"


def write_trace(trace: Sequence, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("iter", "residual", "damp", "mean_abs_x_change"))
        for it, res, damp, dx in trace:
            w.writerow((int(it), repr(float(res)), repr(float(damp)), repr(float(dx))))


def dump_frames(X, path: str | Path) -> None:
    """One line per user: re,im pairs of every frame entry."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in np.asarray(X):
            w.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])


def read_frames(path: str | Path) -> np.ndarray:
    with open(path, newline="") as f:
        vals = [np.array([float(v) for v in r]) for r in csv.reader(f)]
    return np.array([v[0::2] + 1j * v[1::2] for v in vals])


def dump_trial(result: TrialResult, path: str | Path) -> None:
    d = result.debug_dict()
    Path(path).write_text(json.dumps(d, indent=2) + "\n")
