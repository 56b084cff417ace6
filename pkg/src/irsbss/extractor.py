"""Alphabet recovery from noisy complex sequences via CF-domain deconvolution.

A noisy observation is a discrete source plus independent complex Gaussian
noise of known variance.  The characteristic function (CF) of the
observation factors into the source CF times the noise CF, so the source
distribution is recovered by fitting a nonnegative, unit-mass distribution
whose noise-attenuated CF matches the empirical CF of the observation.  The
fit is a convex quadratic over the probability simplex; peaks of the fitted
distribution are the recovered alphabet.

Pipeline: ``build_grid`` -> ``empirical_distribution`` -> ``cf_matrices``
-> ``deconvolve`` -> ``extract_alphabet``, composed by ``extractor_F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, EmptyAlphabetError

GRID_MARGIN = 1.1  # half-width = margin * max |coordinate|, keeps all samples in range


@dataclass
class QuantGrid:
    """Square quantization grid over [-half_width, half_width]^2."""

    bins_per_axis: int
    half_width: float

    @property
    def delta(self) -> float:
        return 2.0 * self.half_width / self.bins_per_axis

    @property
    def centers(self) -> np.ndarray:
        k = np.arange(self.bins_per_axis)
        return -self.half_width + (k + 0.5) * self.delta


@dataclass
class EmpiricalDistribution:
    """Nonnegative bin weights on a grid; sums to 1 minus the dropped mass."""

    grid: QuantGrid
    weights: np.ndarray
    dropped_fraction: float = 0.0


@dataclass
class Alphabet:
    """Recovered constellation points with their probability masses."""

    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class CFSet:
    """Sampled CF of the observation and the factors of the fit model.

    ``L_mat`` holds the observation CF on the (k1*f, k2*f) frequency grid,
    ``R_Q`` the noise CF samples, ``R_V`` the grid phase/scale factors and
    ``F_dft`` the partial DFT matrix mapping bin weights to CF samples.
    """

    grid: QuantGrid
    nf: int
    freq_step: float
    L_mat: np.ndarray
    R_Q: np.ndarray
    R_V: np.ndarray
    F_dft: np.ndarray


@dataclass
class DeconvolveResult:
    distribution: EmpiricalDistribution
    objective_history: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


@dataclass
class ExtractorParams:
    """Knobs of the alphabet extractor; defaults suit final estimates.

    ``sigma_is_total`` marks ``sigma_q`` arguments as the total variance of
    the complex noise (real and imaginary parts each carry half), which is
    the noise convention used across the package.
    """

    bins: int = 64
    nf: int = 128
    threshold: float = 0.1
    min_n: int = 16
    solver_tol: float = 1e-8
    solver_max_iter: int = 500
    sigma_is_total: bool = True

    def reduced(self) -> "ExtractorParams":
        """Cheaper settings for use inside iterative search loops."""
        return ExtractorParams(
            bins=32,
            nf=64,
            threshold=self.threshold,
            min_n=self.min_n,
            solver_tol=1e-6,
            solver_max_iter=150,
            sigma_is_total=self.sigma_is_total,
        )


def build_grid(sequence: np.ndarray, bins_per_axis: int) -> QuantGrid:
    """Grid sized to cover every sample with a 10% margin."""
    seq = np.asarray(sequence, dtype=complex).ravel()
    if seq.size == 0:
        raise DegenerateInputError("cannot build a grid from an empty sequence")
    peak = max(np.max(np.abs(seq.real)), np.max(np.abs(seq.imag)))
    if peak == 0.0:
        raise DegenerateInputError("all-zero sequence has no usable spread")
    if bins_per_axis < 2:
        raise ConfigurationError("bins_per_axis must be at least 2")
    return QuantGrid(bins_per_axis=int(bins_per_axis), half_width=GRID_MARGIN * float(peak))


def empirical_distribution(sequence: np.ndarray, grid: QuantGrid) -> EmpiricalDistribution:
    """Fraction of samples per (real, imag) bin; out-of-range samples dropped."""
    seq = np.asarray(sequence, dtype=complex).ravel()
    d1 = grid.half_width
    hist, _, _ = np.histogram2d(
        seq.real, seq.imag, bins=grid.bins_per_axis, range=[[-d1, d1], [-d1, d1]]
    )
    n = seq.size
    weights = hist / n
    return EmpiricalDistribution(
        grid=grid, weights=weights, dropped_fraction=float(1.0 - weights.sum())
    )


def cf_matrices(
    dist: EmpiricalDistribution, nf: int, sigma_q: float, *, sigma_is_total: bool = True
) -> CFSet:
    """Sample the empirical CF and assemble the factors of the fit model.

    Frequencies are (k1*f, k2*f) for k = 0..nf-1 with f = 1/(delta*nf); the
    grid must satisfy nf >= bins so the CF samples determine the bin weights.
    The noise CF uses the per-axis variance; when ``sigma_is_total`` the
    given sigma_q is the total complex-noise std and is halved accordingly.
    """
    grid = dist.grid
    nb = grid.bins_per_axis
    if nf < nb:
        raise ConfigurationError(f"nf ({nf}) must be >= bins_per_axis ({nb})")
    if sigma_q < 0:
        raise ConfigurationError("sigma_q must be nonnegative")

    delta = grid.delta
    f = 1.0 / (delta * nf)
    k = np.arange(nf)

    sigma_axis_sq = sigma_q**2 / 2.0 if sigma_is_total else sigma_q**2
    r = np.exp(-2.0 * sigma_axis_sq * np.pi**2 * (k * f) ** 2)
    R_Q = np.outer(r, r)

    phase = np.exp(2j * np.pi * k * f * grid.half_width)
    R_V = delta**2 * np.outer(phase, phase)

    F = np.exp(-2j * np.pi * np.outer(k, np.arange(nb)) / nf)
    L_mat = R_V * (F @ dist.weights @ F.T)

    return CFSet(grid=grid, nf=nf, freq_step=f, L_mat=L_mat, R_Q=R_Q, R_V=R_V, F_dft=F)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    shape = v.shape
    x = v.ravel()
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, x.size + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(x - theta, 0.0).reshape(shape)


def deconvolve(
    cfs: CFSet, tol: float = 1e-8, max_iter: int = 500
) -> DeconvolveResult:
    """Fit a simplex-constrained distribution whose modeled CF matches L_mat.

    Minimizes ||L - R_Q . R_V . (F X F^T)||_F^2 over nonnegative X of unit
    mass with an accelerated projected-gradient scheme started from the
    regularized normal-equation solution.  The recorded objective history is
    non-increasing; ``converged`` is False if the iteration cap was hit
    before the relative objective change fell below ``tol``.
    """
    F = cfs.F_dft
    M = cfs.R_Q * cfs.R_V
    L = cfs.L_mat

    # |M| is separable across frequency axes, so the normal operator of the
    # fit is H X conj(H) with H = F^H diag(|m|^2) F; its pseudo-solve gives
    # the unconstrained least-squares solution used as the starting iterate.
    m_sq = np.abs(M.diagonal())  # |M[k,k]| = delta^2 * r[k]^2
    H = F.conj().T @ (m_sq[:, None] * F)
    evals, U = np.linalg.eigh(H)
    lam_max = float(evals[-1])
    inv = np.where(evals > lam_max * 1e-12, 1.0 / np.maximum(evals, 1e-300), 0.0)

    B = F.conj().T @ (np.conj(M) * L) @ F.conj()
    T = U.conj().T @ B @ np.conj(U)
    T = inv[:, None] * T * inv[None, :]
    x = _project_simplex(np.real(U @ T @ U.T))

    def objective(X):
        E = M * (F @ X @ F.T) - L
        return float(np.sum(E.real**2 + E.imag**2))

    def gradient(X):
        E = M * (F @ X @ F.T) - L
        return 2.0 * np.real(F.T @ (M * np.conj(E)) @ F)

    step = 1.0 / (2.0 * lam_max**2)
    fx = objective(x)
    history = [fx]
    x_prev = x
    t_prev = 1.0
    converged = False
    for _ in range(max_iter):
        t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev**2))
        y = x + ((t_prev - 1.0) / t) * (x - x_prev)
        cand = _project_simplex(y - step * gradient(y))
        fc = objective(cand)
        if fc > fx:
            # momentum overshot: restart with a plain projected step
            cand = _project_simplex(x - step * gradient(x))
            fc = objective(cand)
            t = 1.0
            if fc > fx:  # at the numerical floor
                converged = True
                break
        x_prev, x = x, cand
        rel = abs(fx - fc) / max(fx, 1e-300)
        fx = fc
        history.append(fx)
        t_prev = t
        if rel < tol:
            converged = True
            break

    dist = EmpiricalDistribution(grid=cfs.grid, weights=x, dropped_fraction=0.0)
    return DeconvolveResult(distribution=dist, objective_history=history, converged=converged)


def extract_alphabet(
    dist: EmpiricalDistribution, threshold: float = 0.1
) -> Alphabet:
    """Peaks of a fitted distribution, merged into one point per cluster.

    A bin is retained when it is at least as heavy as each of its 8
    neighbors and carries >= threshold * (max weight); retained bins within
    one grid step of each other collapse to their weighted centroid (mass
    spread across adjacent bins counts as a single point).
    """
    w = np.asarray(dist.weights, dtype=float)
    grid = dist.grid
    wmax = w.max()
    if wmax <= 0.0:
        raise EmptyAlphabetError("distribution carries no mass")

    padded = np.full((w.shape[0] + 2, w.shape[1] + 2), -np.inf)
    padded[1:-1, 1:-1] = w
    is_peak = np.ones_like(w, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_peak &= w >= padded[1 + di : 1 + di + w.shape[0], 1 + dj : 1 + dj + w.shape[1]]
    is_peak &= w >= threshold * wmax

    ii, jj = np.nonzero(is_peak)
    if ii.size == 0:
        raise EmptyAlphabetError("no bin passed the retention threshold")

    centers = grid.centers
    points = centers[ii] + 1j * centers[jj]
    weights = w[ii, jj]

    # chain-merge anything within one grid step until stable
    merge_dist = grid.delta * (1.0 + 1e-9)
    while len(points) > 1:
        d = np.abs(points[:, None] - points[None, :])
        np.fill_diagonal(d, np.inf)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] > merge_dist:
            break
        tot = weights[i] + weights[j]
        merged = (weights[i] * points[i] + weights[j] * points[j]) / tot
        keep = np.ones(len(points), dtype=bool)
        keep[[i, j]] = False
        points = np.concatenate([points[keep], [merged]])
        weights = np.concatenate([weights[keep], [tot]])

    order = np.lexsort((points.imag, points.real, -weights))
    return Alphabet(points=points[order], weights=weights[order])


def extractor_F(
    sequence: np.ndarray, sigma_q: float, params: ExtractorParams | None = None
) -> Alphabet:
    """Recover the alphabet of a discrete source observed in Gaussian noise.

    ``sigma_q`` is the known std of the total complex noise (0 for a clean
    sequence).  Composes the grid build, empirical distribution, CF
    sampling, simplex-constrained deconvolution and peak extraction.
    """
    params = params or ExtractorParams()
    seq = np.asarray(sequence, dtype=complex).ravel()
    if seq.size < params.min_n:
        raise ConfigurationError(
            f"sequence length {seq.size} below required minimum {params.min_n}"
        )
    grid = build_grid(seq, params.bins)
    dist = empirical_distribution(seq, grid)
    cfs = cf_matrices(dist, params.nf, sigma_q, sigma_is_total=params.sigma_is_total)
    result = deconvolve(cfs, tol=params.solver_tol, max_iter=params.solver_max_iter)
    return extract_alphabet(result.distribution, params.threshold)
