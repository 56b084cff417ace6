"""Scenario synthesis: channels, symbols, IRS reflection and received blocks.

A base station with M antennas serves N single-antenna legitimate users;
each user is shadowed by a malicious reflecting surface of W elements that
re-emits the user's signal with a random per-element binary phase flip.
During the data phase the stacked transmit matrix is S = sqrt(P) [A; B]
(user symbols on top, reflected streams below, user-major / element-minor)
and the block observation is Y = C S + noise with C = [H, G].

Noise convention: ``sigma2`` is the total variance of a complex sample
(real and imaginary parts each carry sigma2 / 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass
class ScenarioConfig:
    """All experiment parameters for one scenario.

    ``p`` is the N x W table of same-phase reflection probabilities and
    ``path_loss`` the per-user variance scale of the cascaded channels.
    """

    M: int
    N: int
    W: int
    n: int
    L_p: int = 16
    P: float = 1.0
    sigma2: float = 0.1
    p: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    path_loss: np.ndarray = field(default_factory=lambda: np.ones(0))
    seed: int = 0

    def __post_init__(self):
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.p.size == 0:
            self.p = np.full((self.N, self.W), 0.5)
        if self.p.shape != (self.N, self.W):
            raise ConfigurationError(
                f"reflection table shape {self.p.shape} != (N, W) = ({self.N}, {self.W})"
            )
        self.path_loss = np.atleast_1d(np.asarray(self.path_loss, dtype=float))
        if self.path_loss.size == 0:
            self.path_loss = np.ones(self.N)
        if self.path_loss.size == 1 and self.N > 1:
            self.path_loss = np.full(self.N, float(self.path_loss[0]))
        if self.path_loss.shape != (self.N,):
            raise ConfigurationError("path_loss must give one scale per user")
        self.validate()

    def validate(self):
        if self.M < 1 or self.N < 0 or self.W < 0 or self.n < 1:
            raise ConfigurationError("M >= 1, N >= 0, W >= 0, n >= 1 required")
        if self.M < self.streams:
            raise ConfigurationError(
                f"M = {self.M} antennas cannot separate {self.streams} streams"
            )
        if np.any(self.p < 0.0) or np.any(self.p > 1.0):
            raise ConfigurationError("reflection probabilities must lie in [0, 1]")
        if self.sigma2 < 0.0 or self.P <= 0.0:
            raise ConfigurationError("need sigma2 >= 0 and P > 0")
        if np.any(self.path_loss <= 0.0) or np.any(self.path_loss > 1.0):
            raise ConfigurationError("path_loss scales must lie in (0, 1]")

    @property
    def streams(self) -> int:
        """Total stream count N + W*N."""
        return self.N + self.W * self.N


@dataclass
class ChannelSet:
    """Direct channels H (M x N), cascaded channels G (M x W*N), C = [H, G]."""

    H: np.ndarray
    G: np.ndarray

    @property
    def C(self) -> np.ndarray:
        return np.concatenate([self.H, self.G], axis=1)


@dataclass
class SignalBlock:
    """One data-phase block: symbols, reflection phases and the observation.

    ``S`` already carries the sqrt(P) transmit scaling; ``Y = C S + noise``.
    """

    A: np.ndarray
    Phi: np.ndarray
    B: np.ndarray
    S: np.ndarray
    Y: np.ndarray | None = None
    noise: np.ndarray | None = None


def draw_channels(cfg: ScenarioConfig, rng: np.random.Generator) -> ChannelSet:
    """i.i.d. Rayleigh channels: unit-variance direct, path-loss-scaled cascaded."""
    shape_h = (cfg.M, cfg.N)
    H = (rng.standard_normal(shape_h) + 1j * rng.standard_normal(shape_h)) / np.sqrt(2.0)
    shape_g = (cfg.M, cfg.W * cfg.N)
    G = (rng.standard_normal(shape_g) + 1j * rng.standard_normal(shape_g)) / np.sqrt(2.0)
    if shape_g[1]:
        scale = np.sqrt(np.repeat(cfg.path_loss, cfg.W))
        G = G * scale[None, :]
    return ChannelSet(H=H, G=G)


def draw_lu_symbols(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """N x n BPSK symbol matrix, rows independent across users."""
    bits = rng.integers(0, 2, size=(cfg.N, cfg.n))
    return 1.0 - 2.0 * bits  # bit 0 -> +1, bit 1 -> -1


def apply_reflection(
    A: np.ndarray, p: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Random binary-phase reflection of each user's stream by each element.

    Element (j, w) keeps the phase with probability p[j, w] and flips it
    (phase pi) otherwise, independently per instant.  Returns the phase
    table Phi (entries 0 or pi) and the reflected streams B, both stacked
    user-major / element-minor as rows.
    """
    A = np.atleast_2d(A)
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ConfigurationError("reflection probabilities must lie in [0, 1]")
    n_users, n = A.shape
    w = p.shape[1] if p.size else 0
    if p.shape[0] != n_users:
        raise ConfigurationError("one row of reflection probabilities per user")

    flip = rng.random(size=(n_users, w, n)) >= p[:, :, None]
    Phi = np.where(flip, np.pi, 0.0).reshape(n_users * w, n)
    B = (A[:, None, :] * np.where(flip, -1.0, 1.0)).reshape(n_users * w, n)
    return Phi, B.astype(complex)


def build_block(
    cfg: ScenarioConfig, A: np.ndarray, Phi: np.ndarray, B: np.ndarray
) -> SignalBlock:
    """Stack the transmit matrix S = sqrt(P) [A; B]."""
    S = np.sqrt(cfg.P) * np.concatenate([np.atleast_2d(A).astype(complex), B], axis=0)
    return SignalBlock(A=A, Phi=Phi, B=B, S=S)


def synthesize_rx(
    channels: ChannelSet, block: SignalBlock, cfg: ScenarioConfig, rng: np.random.Generator
) -> np.ndarray:
    """Y = C S + noise, noise i.i.d. complex Gaussian of total variance sigma2."""
    C = channels.C
    if C.shape[1] != block.S.shape[0]:
        raise ConfigurationError("channel and stream counts disagree")
    shape = (cfg.M, cfg.n)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(
        cfg.sigma2 / 2.0
    )
    Y = C @ block.S + noise
    block.Y = Y
    block.noise = noise
    return Y


def pilot_codebook(cfg: ScenarioConfig) -> np.ndarray:
    """N orthonormal pilot rows (truncated unitary DFT of length L_p)."""
    if cfg.L_p < cfg.N:
        raise ConfigurationError(f"pilot length {cfg.L_p} shorter than user count {cfg.N}")
    k = np.arange(cfg.L_p)
    F = np.exp(-2j * np.pi * np.outer(k, k) / cfg.L_p) / np.sqrt(cfg.L_p)
    return F[: cfg.N, :]


def pilot_phase_estimate(
    cfg: ScenarioConfig, channels: ChannelSet, rng: np.random.Generator
) -> np.ndarray:
    """Pilot-phase projection estimates, one column per user.

    The surfaces reflect pilots with identity phases, so the noiseless
    projection returns h_j plus the sum of that user's cascaded channels:
    the spoofing contamination floor.
    """
    X = pilot_codebook(cfg)
    combined = channels.H.copy()
    for j in range(cfg.N):
        if cfg.W:
            combined[:, j] += channels.G[:, j * cfg.W : (j + 1) * cfg.W].sum(axis=1)
    shape = (cfg.M, cfg.L_p)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(
        cfg.sigma2 / 2.0
    )
    Y_p = combined @ X + noise
    return Y_p @ X.conj().T


def correlation_theoretical(p_w: float) -> float:
    """Correlation between a stream and its randomly flipped reflection."""
    if not 0.0 <= p_w <= 1.0:
        raise ConfigurationError("p_w must lie in [0, 1]")
    return 2.0 * p_w - 1.0


def source_covariance(cfg: ScenarioConfig) -> np.ndarray:
    """Limit of (1/n) S S^H for unit-power streams.

    Unit diagonal; within user j the (a_j, b_jw) entry is 2 p_w - 1 and the
    (b_jw, b_jw') entry is (2 p_w - 1)(2 p_w' - 1); zero across users.
    """
    K = cfg.streams
    R = np.eye(K)
    rho = 2.0 * cfg.p - 1.0  # N x W
    for j in range(cfg.N):
        for w in range(cfg.W):
            bw = cfg.N + j * cfg.W + w
            R[j, bw] = R[bw, j] = rho[j, w]
            for w2 in range(w + 1, cfg.W):
                bw2 = cfg.N + j * cfg.W + w2
                R[bw, bw2] = R[bw2, bw] = rho[j, w] * rho[j, w2]
    return R
