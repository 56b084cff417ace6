"""Blind stream extraction and channel estimation on the denoised perimeter.

One round finds a unit combining vector minimizing the convex perimeter of
the alphabet recovered from the combined output, extracts that stream, and
estimates its channel column row-by-row by searching a finite candidate set
of coefficient quotients.  The estimated rank-1 contribution is deflated
and the next round repeats on the residual.

Setting ``use_extractor=False`` turns the pipeline into the plain
bounded-component baseline: hulls are computed on raw samples and candidate
alphabets come from raw hull vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    EmptyAlphabetError,
    ExtractionFailure,
)
from .extractor import ExtractorParams, extractor_F
from .geometry import convex_hull, hull_support_map, perimeter_of
from .model import ScenarioConfig


@dataclass
class BSSParams:
    """Search and solver knobs; defaults suit the desk-scale scenarios."""

    use_extractor: bool = True
    perimeter_tol: float = 1e-4
    max_iter: int = 100
    max_restarts: int = 3
    backtrack_max: int = 11
    # a BPSK stream is fully separated once its alphabet reaches this size;
    # pushing the perimeter below that only trades amplitude for phase games
    min_alphabet: int = 2
    # consecutive sub-tolerance improvements required before stopping; the
    # descent crawls through shallow valley sections that precede big drops
    patience: int = 3
    dedupe_eps: float = 1e-6
    # candidate-alphabet caps keep the quotient search tractable
    y_alphabet_cap: int = 8
    z_alphabet_cap: int = 4
    bca_alphabet_cap: int = 6
    loop_extractor: ExtractorParams = field(
        default_factory=lambda: ExtractorParams(
            bins=32, nf=64, solver_tol=1e-6, solver_max_iter=150
        )
    )
    scoring_extractor: ExtractorParams = field(
        default_factory=lambda: ExtractorParams(
            bins=32, nf=64, solver_tol=1e-6, solver_max_iter=60
        )
    )


@dataclass
class ExtractionResult:
    u: np.ndarray
    s: np.ndarray
    perimeter_history: list[float]
    converged: bool
    restarts: int = 0


@dataclass
class StreamEstimate:
    s: np.ndarray
    c_hat: np.ndarray
    flags: tuple = ()


@dataclass
class Alignment:
    """Slot j of the aligned set holds source estimate ``permutation[j]``
    scaled by ``alphas[j]`` so it matches true column j."""

    permutation: tuple
    alphas: tuple


@dataclass
class EstimateSet:
    streams: list
    alignment: Alignment | None = None


class _Collapsed(RuntimeError):
    """Internal: the combined output lost its discrete structure."""


# Step multipliers tried per descent iteration, first strict improvement wins.
_STEP_LADDER = (1.0, 2.0, 0.5, 4.0, 0.25, 8.0, 0.125, 32.0, 1 / 32, 128.0, 1 / 128)


def reduce_dimension(Y: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top-K principal directions of the observation.

    Returns (Y_red, back_map) with orthonormal ``back_map`` columns; the
    perimeter search runs in the K-dimensional signal subspace so unit
    vectors orthogonal to every channel cannot zero out the objective.
    """
    Y = np.atleast_2d(Y)
    M = Y.shape[0]
    if K > M:
        raise ConfigurationError(f"cannot reduce {M} dimensions to {K}")
    if K == 0:
        return np.zeros((0, Y.shape[1]), dtype=complex), np.zeros((M, 0), dtype=complex)
    cov = Y @ Y.conj().T
    _, vecs = np.linalg.eigh(cov)
    back = vecs[:, ::-1][:, :K]
    return back.conj().T @ Y, back


def extract_signal(u: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Combined output s = u Y (u as a row vector, no conjugation)."""
    return np.asarray(u) @ np.asarray(Y)


def _sequence_alphabet(seq, sigma_q, extractor_params, params, snap=True):
    """Alphabet points of a sequence; raw hull vertices in baseline mode.

    With ``snap`` the recovered points are moved to their nearest raw
    samples.  The deconvolution decides how many points exist and roughly
    where; the nearest sample pins each one to an exactly observed value,
    which removes the grid-quantization jitter from downstream perimeters
    (and makes them exact in the noiseless case).
    """
    if params.use_extractor:
        alph = extractor_F(seq, sigma_q, extractor_params)
        pts, w = alph.points, alph.weights
        if snap and len(pts):
            snapped = seq[hull_support_map(pts, seq)]
            keep = _first_unique(snapped)
            pts, w = snapped[keep], w[keep]
        return pts, w
    hull = convex_hull(seq)
    idx = np.unique(hull.vertex_indices)
    return seq[idx], np.full(len(idx), 1.0 / len(idx))


def _first_unique(values: np.ndarray, tol: float = 1e-15) -> np.ndarray:
    """Boolean mask keeping the first occurrence of near-equal values."""
    keep = np.ones(len(values), dtype=bool)
    for i in range(1, len(values)):
        if np.any(np.abs(values[:i][keep[:i]] - values[i]) <= tol):
            keep[i] = False
    return keep


def _farthest_subset(points: np.ndarray, cap: int) -> np.ndarray:
    """Greedy max-min-distance subset, seeded at the largest magnitude."""
    if len(points) <= cap:
        return points
    chosen = [int(np.argmax(np.abs(points)))]
    dist = np.abs(points - points[chosen[0]])
    while len(chosen) < cap:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.abs(points - points[nxt]))
    return points[sorted(chosen)]


def perimeter_objective(
    u: np.ndarray,
    Y: np.ndarray,
    sigma_q: float,
    params: BSSParams,
    extractor_params: ExtractorParams | None = None,
) -> float:
    """Convex perimeter of the (denoised) alphabet of u Y."""
    seq = extract_signal(u, Y)
    pts, _ = _sequence_alphabet(
        seq, sigma_q, extractor_params or params.loop_extractor, params
    )
    return perimeter_of(pts)


def _descend(Y, u0, sigma_q, params):
    """Gradient descent on the perimeter objective from a given start."""
    n_dim = Y.shape[0]
    u = u0 / np.linalg.norm(u0)
    seq = extract_signal(u, Y)
    pts, _ = _sequence_alphabet(seq, sigma_q, params.loop_extractor, params)
    if len(pts) < 2:
        raise _Collapsed
    hull = convex_hull(pts)
    per = hull.perimeter
    history = [per]
    converged = False
    slow_steps = 0

    for _ in range(params.max_iter):
        if len(pts) <= params.min_alphabet:
            converged = True  # minimal binary support: fully separated
            break
        cycle = hull.vertex_indices
        vpts = pts[cycle]
        samples = hull_support_map(vpts, seq)
        cols = Y[:, samples]
        dY = cols[:, 1:] - cols[:, :-1]
        edges = np.abs(vpts[1:] - vpts[:-1])
        ok = edges > 1e-15
        if not np.any(ok):
            converged = True
            break
        # with s = u @ Y (no conjugation) the edge scalars are u . d, so the
        # u*-gradient of sum |u . d_i| accumulates conj(d_i) d_i^T
        Wp = (dY[:, ok].conj() / edges[ok][None, :]) @ dY[:, ok].T
        g = (0.5 * Wp @ u - u * per) / np.linalg.norm(u)
        gn2 = float(np.real(np.vdot(g, g)))
        if gn2 < 1e-30:
            converged = True
            break
        mu = 1.0 / (2.0 * gn2)

        # Strict-improvement line search over a bidirectional step ladder:
        # the base step both over- and under-shoots depending on the local
        # plateau structure of the sampled objective, so every scale is
        # evaluated and the best improvement wins.
        best = None
        for scale in _STEP_LADDER[: params.backtrack_max]:
            cand = u - (mu * scale) * g
            nrm = np.linalg.norm(cand)
            if nrm < 1e-15:
                continue
            cand = cand / nrm
            cand_seq = extract_signal(cand, Y)
            try:
                cand_pts, _ = _sequence_alphabet(
                    cand_seq, sigma_q, params.loop_extractor, params
                )
            except (DegenerateInputError, EmptyAlphabetError):
                continue
            if len(cand_pts) < 2:
                continue
            cand_hull = convex_hull(cand_pts)
            if cand_hull.perimeter < per and (
                best is None or cand_hull.perimeter < best[3].perimeter
            ):
                best = (cand, cand_seq, cand_pts, cand_hull)
        if best is None:
            converged = True  # no improving step at any scale: local minimum
            break

        u, seq, pts, hull = best
        rel = abs(per - hull.perimeter) / max(per, 1e-300)
        per = hull.perimeter
        history.append(per)
        slow_steps = slow_steps + 1 if rel < params.perimeter_tol else 0
        if slow_steps >= params.patience:
            converged = True
            break

    return ExtractionResult(u=u, s=seq, perimeter_history=history, converged=converged)


def extract_vector(
    Y_red: np.ndarray,
    sigma_q: float,
    params: BSSParams,
    rng: np.random.Generator,
) -> ExtractionResult:
    """Unit combining vector minimizing the denoised convex perimeter.

    Starts at the first coordinate axis; if the combined output collapses to
    fewer than two alphabet points, restarts from random unit vectors up to
    ``max_restarts`` times before giving up.
    """
    Y_red = np.atleast_2d(Y_red)
    n_dim = Y_red.shape[0]
    u0 = np.zeros(n_dim, dtype=complex)
    u0[0] = 1.0
    restarts = 0
    while True:
        try:
            result = _descend(Y_red, u0, sigma_q, params)
            result.restarts = restarts
            return result
        except _Collapsed:
            restarts += 1
            if restarts > params.max_restarts:
                raise ExtractionFailure(
                    "combined output kept collapsing to a single alphabet point"
                )
            v = rng.standard_normal(n_dim) + 1j * rng.standard_normal(n_dim)
            u0 = v / np.linalg.norm(v)


def candidate_set(
    y_alphabet: np.ndarray, z_alphabet: np.ndarray, dedupe_eps: float = 1e-6
) -> np.ndarray:
    """Finite coefficient candidate set of pairwise alphabet quotients.

    All (y - y') / (z - z') with distinct pairs on both sides, deduplicated
    within ``dedupe_eps``; 0 is always appended because the quotient
    construction cannot produce it when the true coefficient vanishes.
    """
    y = np.asarray(y_alphabet, dtype=complex).ravel()
    z = np.asarray(z_alphabet, dtype=complex).ravel()
    if z.size < 2:
        raise DegenerateInputError("stream alphabet needs at least two points")

    dy = (y[:, None] - y[None, :]).ravel()
    dy = dy[np.abs(dy) > 1e-15]
    dz = (z[:, None] - z[None, :]).ravel()
    dz = dz[np.abs(dz) > 1e-15]
    if dz.size == 0:
        raise DegenerateInputError("stream alphabet points coincide")
    cands = (dy[:, None] / dz[None, :]).ravel() if dy.size else np.zeros(0, dtype=complex)
    cands = np.concatenate([cands, [0.0 + 0.0j]])

    order = np.lexsort((cands.imag, cands.real))
    cands = cands[order]
    kept = [cands[0]]
    for c in cands[1:]:
        if abs(c - kept[-1]) > dedupe_eps:
            kept.append(c)
    return np.asarray(kept, dtype=complex)


def _snap_to_samples(points: np.ndarray, sequence: np.ndarray) -> np.ndarray:
    """Replace alphabet points by their nearest raw samples (deduplicated).

    Alphabet points live on grid-bin centers; the nearest observed sample is
    the exact source value in the noiseless case, which is what makes the
    quotient candidates exact.
    """
    snapped = sequence[hull_support_map(points, sequence)]
    order = np.lexsort((snapped.imag, snapped.real))
    snapped = snapped[order]
    keep = np.ones(len(snapped), dtype=bool)
    keep[1:] = np.abs(np.diff(snapped)) > 1e-15
    return snapped[keep]


def _residual_perimeter(seq, sigma_q, params):
    """Objective for one coefficient candidate: perimeter after removal."""
    scale = float(np.max(np.abs(seq))) if seq.size else 0.0
    if scale <= 1e-12:
        return 0.0  # perfect collapse
    try:
        pts, _ = _sequence_alphabet(seq, sigma_q, params.scoring_extractor, params)
    except (DegenerateInputError, EmptyAlphabetError):
        return 0.0
    return perimeter_of(pts)


def estimate_channel_row(
    Y_row: np.ndarray,
    s: np.ndarray,
    sigma_q: float,
    params: BSSParams,
    z_points: np.ndarray | None = None,
) -> tuple[complex, tuple]:
    """Channel coefficient of one observation row given the extracted stream.

    Evaluates the residual perimeter at every quotient candidate and returns
    the minimizer; ties break toward smaller magnitude, then first found.
    ``z_points`` lets the caller reuse the stream alphabet across rows.
    Degenerate alphabets yield coefficient 0 with a flag.
    """
    Y_row = np.asarray(Y_row, dtype=complex).ravel()
    s = np.asarray(s, dtype=complex).ravel()
    flags = ()
    try:
        if z_points is None:
            zp, _ = _sequence_alphabet(s, sigma_q, params.loop_extractor, params)
            z_points = _snap_to_samples(zp, s)
        yp, yw = _sequence_alphabet(Y_row, sigma_q, params.loop_extractor, params)
        if params.use_extractor:
            if len(yp) > params.y_alphabet_cap:
                top = np.argsort(yw)[::-1][: params.y_alphabet_cap]
                yp = yp[np.sort(top)]
        else:
            yp = _farthest_subset(yp, params.bca_alphabet_cap)
        y_points = _snap_to_samples(yp, Y_row)
        cands = candidate_set(y_points, z_points, params.dedupe_eps)
    except (DegenerateInputError, EmptyAlphabetError):
        return 0.0 + 0.0j, ("degenerate_alphabet",)

    best_c = None
    best_obj = np.inf
    best_abs = np.inf
    for c in cands:
        residual = Y_row - c * s
        # the removed stream carries its own noise copy
        sigma_eff = sigma_q * np.sqrt(1.0 + abs(c) ** 2)
        obj = _residual_perimeter(residual, sigma_eff, params)
        if obj < best_obj or (obj == best_obj and abs(c) < best_abs):
            best_c, best_obj, best_abs = c, obj, abs(c)
    return complex(best_c), flags


def estimate_channel(
    Y: np.ndarray, s: np.ndarray, sigma_q: float, params: BSSParams
) -> tuple[np.ndarray, tuple]:
    """Per-row coefficient search over the full (un-reduced) observation."""
    Y = np.atleast_2d(Y)
    s = np.asarray(s, dtype=complex).ravel()
    flags = []
    try:
        zp, zw = _sequence_alphabet(s, sigma_q, params.loop_extractor, params)
        if params.use_extractor:
            if len(zp) > params.z_alphabet_cap:
                top = np.argsort(zw)[::-1][: params.z_alphabet_cap]
                zp = zp[np.sort(top)]
        else:
            zp = _farthest_subset(zp, params.bca_alphabet_cap)
        z_points = _snap_to_samples(zp, s)
    except (DegenerateInputError, EmptyAlphabetError):
        z_points = np.zeros(0, dtype=complex)

    c_hat = np.zeros(Y.shape[0], dtype=complex)
    if len(z_points) < 2:
        return c_hat, ("degenerate_stream_alphabet",)
    for m in range(Y.shape[0]):
        c_hat[m], row_flags = estimate_channel_row(
            Y[m], s, sigma_q, params, z_points=z_points
        )
        for fl in row_flags:
            flags.append(f"row{m}:{fl}")
    return c_hat, tuple(flags)


def deflate(Y: np.ndarray, c_hat: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Remove the estimated rank-1 contribution."""
    return Y - np.outer(c_hat, s)


def run_bss(
    Y: np.ndarray,
    cfg: ScenarioConfig,
    params: BSSParams,
    rng: np.random.Generator,
) -> EstimateSet:
    """Extract all N + W*N streams and their channels by deflation rounds.

    Each round reduces the current residual to the number of streams still
    unextracted, finds a combining vector there, extracts the stream from
    the full residual via the lifted vector, estimates its channel column
    and deflates.  Unrecoverable extraction aborts with the remaining
    streams flagged.
    """
    K = cfg.streams
    sigma = float(np.sqrt(cfg.sigma2))
    residual = np.array(Y, dtype=complex)
    n = residual.shape[1]
    streams = []
    for i in range(K):
        Y_red, back = reduce_dimension(residual, K - i)
        try:
            res = extract_vector(Y_red, sigma, params, rng)
        except ExtractionFailure:
            for _ in range(i, K):
                streams.append(
                    StreamEstimate(
                        s=np.zeros(n, dtype=complex),
                        c_hat=np.zeros(residual.shape[0], dtype=complex),
                        flags=("extraction_failed",),
                    )
                )
            break
        u_full = res.u @ back.conj().T
        s_i = extract_signal(u_full, residual)
        c_hat, flags = estimate_channel(residual, s_i, sigma, params)
        if not res.converged:
            flags = flags + ("extraction_not_converged",)
        residual = deflate(residual, c_hat, s_i)
        streams.append(StreamEstimate(s=s_i, c_hat=c_hat, flags=flags))
    return EstimateSet(streams=streams, alignment=None)


def resolve_ambiguity(
    estimates: EstimateSet, C_true: np.ndarray, S_true: np.ndarray
) -> EstimateSet:
    """Oracle order/phase resolution against the ground truth.

    Greedy maximum-|correlation| assignment of estimated channels to true
    columns; each matched estimate is scaled by the least-squares complex
    factor alpha = (c_hat^H c) / ||c_hat||^2 with the inverse applied to its
    stream.  Slot j of the result corresponds to true column j.
    """
    C_true = np.atleast_2d(C_true)
    S_true = np.atleast_2d(S_true)
    n_cols = C_true.shape[1]
    n_est = len(estimates.streams)
    n_samp = S_true.shape[1] if S_true.size else 0

    corr = np.zeros((n_est, n_cols))
    for i, st in enumerate(estimates.streams):
        nrm = np.linalg.norm(st.c_hat)
        if nrm == 0.0:
            continue
        for k in range(n_cols):
            ck = C_true[:, k]
            corr[i, k] = abs(np.vdot(st.c_hat, ck)) / (nrm * np.linalg.norm(ck))

    available = corr.copy()
    assignment = {}  # true column -> estimate index
    for _ in range(min(n_est, n_cols)):
        i, k = np.unravel_index(np.argmax(available), available.shape)
        assignment[int(k)] = int(i)
        available[i, :] = -1.0
        available[:, k] = -1.0

    aligned = []
    perm = []
    alphas = []
    for k in range(n_cols):
        if k not in assignment:
            aligned.append(
                StreamEstimate(
                    s=np.zeros(n_samp, dtype=complex),
                    c_hat=np.zeros(C_true.shape[0], dtype=complex),
                    flags=("unmatched_column",),
                )
            )
            perm.append(-1)
            alphas.append(1.0 + 0.0j)
            continue
        st = estimates.streams[assignment[k]]
        nrm2 = float(np.real(np.vdot(st.c_hat, st.c_hat)))
        if nrm2 > 0.0:
            alpha = np.vdot(st.c_hat, C_true[:, k]) / nrm2
        else:
            alpha = 1.0 + 0.0j
        s_aligned = st.s / alpha if abs(alpha) > 0.0 else st.s
        aligned.append(
            StreamEstimate(s=s_aligned, c_hat=alpha * st.c_hat, flags=st.flags)
        )
        perm.append(assignment[k])
        alphas.append(complex(alpha))
    return EstimateSet(
        streams=aligned, alignment=Alignment(permutation=tuple(perm), alphas=tuple(alphas))
    )
