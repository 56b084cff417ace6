"""Channel-estimation and detection quality metrics with per-user aggregation.

NMSE and BER aggregate in the linear domain; SINR values are produced in dB
and aggregated in the dB domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass
class TrialMetrics:
    per_user: dict
    aggregates: dict


def nmse(h_hat: np.ndarray, h: np.ndarray) -> float:
    """||h_hat - h||^2 / ||h||^2 (alignment is the caller's job)."""
    h_hat = np.asarray(h_hat, dtype=complex).ravel()
    h = np.asarray(h, dtype=complex).ravel()
    if h_hat.shape != h.shape:
        raise ConfigurationError("estimate and reference lengths differ")
    denom = float(np.sum(np.abs(h) ** 2))
    if denom == 0.0:
        raise ConfigurationError("NMSE undefined for a zero reference channel")
    return float(np.sum(np.abs(h_hat - h) ** 2)) / denom


def zf_sinr(
    C_hat: np.ndarray,
    C_true: np.ndarray,
    P: float,
    sigma2: float,
    cols: np.ndarray | None = None,
) -> np.ndarray:
    """Post-zero-forcing SINR (dB) per estimated stream.

    Row j of the pseudoinverse of ``C_hat`` detects the stream whose true
    channel is column ``cols[j]`` of ``C_true``; every other true column
    contributes interference.  ``C_hat`` may estimate a subset of the
    streams (e.g. only the legitimate users).
    """
    C_hat = np.atleast_2d(np.asarray(C_hat, dtype=complex))
    C_true = np.atleast_2d(np.asarray(C_true, dtype=complex))
    J = C_hat.shape[1]
    if cols is None:
        cols = np.arange(J)
    cols = np.asarray(cols, dtype=int)
    if np.linalg.matrix_rank(C_hat) < J:
        raise ConfigurationError("ZF detection needs a full-column-rank estimate")
    W = np.linalg.pinv(C_hat)  # J x M

    out = np.empty(J)
    for j in range(J):
        w = W[j]
        gains = np.abs(w @ C_true) ** 2
        sig = P * gains[cols[j]]
        interference = P * (gains.sum() - gains[cols[j]])
        noise = sigma2 * float(np.sum(np.abs(w) ** 2))
        out[j] = 10.0 * np.log10(sig / (interference + noise))
    return out


def ber(s_hat: np.ndarray, a: np.ndarray) -> float:
    """Fraction of BPSK sign errors of the real part (phase-aligned upstream)."""
    s_hat = np.asarray(s_hat).ravel()
    a = np.asarray(a).ravel()
    if s_hat.shape != a.shape:
        raise ConfigurationError("sequence lengths differ")
    # a zero real part never matches either symbol
    return float(np.mean((np.real(s_hat) * np.real(a)) <= 0.0))


def aggregate(per_user: dict) -> TrialMetrics:
    """Mean/min/max across users; SINR handled in the dB domain."""
    if not per_user:
        raise ConfigurationError("no per-user metrics to aggregate")
    metric_names = next(iter(per_user.values())).keys()
    aggregates = {}
    for name in metric_names:
        vals = np.asarray([per_user[u][name] for u in per_user], dtype=float)
        aggregates[name] = {
            "mean": float(np.mean(vals)),
            "min": float(np.min(vals)),
            "max": float(np.max(vals)),
        }
    return TrialMetrics(per_user=per_user, aggregates=aggregates)
