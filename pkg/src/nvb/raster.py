"""Classical raster-scan baseline: find eight dips and fit Lorentzians to them.

Fit quality is scored with a confidence-weighted MAE and normalized by the
success probability, so that scans where the fit cannot find all eight
resonances are charged to the error budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .physics import DEFAULT_CONSTANTS, N_RESONANCES, PhysicsConstants, SpectrumSample

ERROR_CAP_MHZ = 1e6
MIN_CENTER_GAP_MHZ = 0.1
N_PARAMS = 1 + 3 * N_RESONANCES


@dataclass
class PeakGuess:
    centers: np.ndarray
    widths: np.ndarray
    contrasts: np.ndarray
    baseline: float

    def __len__(self):
        return self.centers.size


@dataclass
class FitResult:
    centers_mhz: np.ndarray
    confidences_mhz: np.ndarray
    widths_mhz: np.ndarray = field(default_factory=lambda: np.zeros(0))
    contrasts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    baseline: float = float("nan")
    success: bool = False
    converged: bool = False
    iterations: int = 0
    residual_norm: float = float("nan")
    reason: str = ""

    @classmethod
    def failure(cls, reason: str, iterations: int = 0) -> "FitResult":
        empty = np.zeros(0)
        return cls(empty, empty, success=False, iterations=iterations, reason=reason)


@dataclass
class BatchFitReport:
    per_sample: List[FitResult]
    per_sample_error_mhz: np.ndarray  # nan for failures
    mae_mhz: float
    success_probability: float
    normalized_error_mhz: float  # nan when P == 0
    std_mhz: float = float("nan")


# --- detection ------------------------------------------------------------------


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    left = window // 2
    padded = np.pad(values, (left, window - 1 - left), mode="edge")
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def noise_sigma(values: np.ndarray) -> float:
    """Robust white-noise std from the MAD of first differences."""
    d = np.diff(values)
    if d.size == 0:
        return 0.0
    mad = np.median(np.abs(d - np.median(d)))
    return float(1.4826 * mad / np.sqrt(2.0))


def detect_peaks(sample: SpectrumSample, max_peaks: int = N_RESONANCES, k_sigma: float = 2.5) -> PeakGuess:
    """Up to ``max_peaks`` dips found on a moving-average-smoothed trace.

    A dip qualifies when its smoothed minimum lies more than ``k_sigma`` noise
    levels (of the smoothed trace) below the median baseline. Returned
    sorted by frequency.
    """
    values = np.asarray(sample.values, dtype=float)
    grid = sample.grid_mhz
    n = values.size
    if n < 16:
        raise ValueError("peak detection needs at least 16 points")
    window = max(3, n // 100)
    smooth = _smooth(values, window)
    baseline = float(np.median(smooth))
    sigma = noise_sigma(values) / np.sqrt(window)
    threshold = baseline - k_sigma * sigma

    interior = np.arange(1, n - 1)
    is_min = (smooth[interior] < smooth[interior - 1]) & (smooth[interior] <= smooth[interior + 1])
    idx = interior[is_min & (smooth[interior] < threshold)]
    idx = idx[np.argsort(smooth[idx], kind="stable")]

    kept: List[int] = []
    for i in idx:
        if all(abs(int(i) - j) >= window for j in kept):
            kept.append(int(i))
        if len(kept) == max_peaks:
            break
    kept.sort()
    step = grid[1] - grid[0]
    centers = grid[kept].astype(float)
    depths = np.array([baseline - smooth[i] for i in kept])
    widths = np.array([_half_width(smooth, i, baseline, step) for i in kept])
    return PeakGuess(centers, widths, depths, baseline)


def _half_width(smooth: np.ndarray, i: int, baseline: float, step: float) -> float:
    half = baseline - (baseline - smooth[i]) / 2.0
    lo = i
    while lo > 0 and smooth[lo] < half:
        lo -= 1
    hi = i
    while hi < smooth.size - 1 and smooth[hi] < half:
        hi += 1
    return float(np.clip((hi - lo) * step, 2.0 * step, 60.0))


def seed_parameters(init: PeakGuess, n_peaks: int = N_RESONANCES) -> np.ndarray:
    """Pad ``init`` to ``n_peaks`` seeds by splitting the deepest dips.

    A split dip is replaced by two seeds at +/- half its width.
    """
    centers = list(init.centers)
    widths = list(init.widths)
    contrasts = list(init.contrasts)
    if not centers:
        raise ValueError("no candidates to seed from")
    order = list(np.argsort(-np.asarray(contrasts), kind="stable"))
    k = 0
    while len(centers) < n_peaks:
        j = order[k % len(order)]
        k += 1
        c, w, a = centers[j], widths[j], contrasts[j]
        centers[j] = c - w / 2.0
        centers.append(c + w / 2.0)
        widths.append(w)
        contrasts.append(a)
    p = np.empty(1 + 3 * n_peaks)
    p[0] = init.baseline
    order = np.argsort(centers, kind="stable")
    p[1 : 1 + n_peaks] = np.asarray(centers)[order]
    p[1 + n_peaks : 1 + 2 * n_peaks] = np.asarray(widths)[order]
    p[1 + 2 * n_peaks :] = np.asarray(contrasts)[order]
    return p


# --- Levenberg-Marquardt -----------------------------------------------------


def _model_and_jacobian(grid: np.ndarray, p: np.ndarray, k: int):
    f0 = p[1 : 1 + k]
    h = p[1 + k : 1 + 2 * k] / 2.0
    c = p[1 + 2 * k :]
    d = grid[:, None] - f0[None, :]
    h2 = h * h
    den = d * d + h2
    lor = h2 / den
    model = p[0] - lor @ c
    den2 = den * den
    jac = np.empty((grid.size, 1 + 3 * k))
    jac[:, 0] = 1.0
    jac[:, 1 : 1 + k] = -c * (2.0 * d * h2 / den2)
    jac[:, 1 + k : 1 + 2 * k] = -c * (h * d * d / den2)
    jac[:, 1 + 2 * k :] = -lor
    return model, jac


def levenberg_marquardt(
    grid: np.ndarray,
    values: np.ndarray,
    p0: np.ndarray,
    k: int = N_RESONANCES,
    max_iter: int = 200,
    rtol: float = 1e-8,
    xtol: float = 1e-10,
    lam0: float = 1e-3,
):
    """Minimize the squared residual of the k-Lorentzian model.

    Returns (params, jacobian, rss, iterations, converged). Raises
    ``np.linalg.LinAlgError`` when the damped normal matrix is singular.
    """
    p = p0.astype(float).copy()
    model, jac = _model_and_jacobian(grid, p, k)
    r = model - values
    rss = float(r @ r)
    lam = lam0
    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-12 * max(np.max(np.diag(jtj)), 1e-300))
        while True:
            step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError("non-finite step")
            p_new = p + step
            model_new, jac_new = _model_and_jacobian(grid, p_new, k)
            r_new = model_new - values
            rss_new = float(r_new @ r_new)
            step_norm = float(np.linalg.norm(step))
            if np.isfinite(rss_new) and rss_new < rss:
                decrease = (rss - rss_new) / rss
                p, jac, r, rss = p_new, jac_new, r_new, rss_new
                lam = max(lam / 10.0, 1e-12)
                if decrease < rtol or step_norm < xtol:
                    return p, jac, rss, it, True
                break
            if step_norm < xtol:
                return p, jac, rss, it, True
            lam *= 10.0
            if lam > 1e16:
                return p, jac, rss, it, True
    return p, jac, rss, max_iter, False


def fit_lorentzians(
    sample: SpectrumSample,
    init: Optional[PeakGuess] = None,
    max_iter: int = 200,
) -> FitResult:
    """Fit eight Lorentzian dips plus a shared baseline.

    Never raises on numerical trouble; a failed fit comes back with
    ``success=False`` and a ``reason``.
    """
    grid = np.asarray(sample.grid_mhz, dtype=float)
    values = np.asarray(sample.values, dtype=float)
    k = N_RESONANCES
    if grid.size <= N_PARAMS:
        return FitResult.failure(f"{grid.size} points cannot constrain {N_PARAMS} parameters")
    if init is None:
        init = detect_peaks(sample)
    if len(init) == 0:
        return FitResult.failure("no dips detected")
    p0 = seed_parameters(init, k)
    try:
        p, jac, rss, iters, converged = levenberg_marquardt(grid, values, p0, k, max_iter=max_iter)
        dof = grid.size - N_PARAMS
        cov = np.linalg.inv(jac.T @ jac) * (rss / dof)
    except np.linalg.LinAlgError:
        return FitResult.failure("singular normal matrix")

    centers = p[1 : 1 + k]
    var = np.diag(cov)[1 : 1 + k]
    order = np.argsort(centers, kind="stable")
    centers = centers[order]
    conf = np.sqrt(np.abs(var[order]))
    widths = np.abs(p[1 + k : 1 + 2 * k])[order]
    contrasts = p[1 + 2 * k :][order]

    reasons = []
    if not converged:
        reasons.append("not converged")
    if not np.all(np.isfinite(centers)) or not np.all(np.isfinite(conf)):
        reasons.append("non-finite parameters")
    lo, hi = grid[0], grid[-1]
    if np.any(centers < lo) or np.any(centers > hi):
        reasons.append("center outside window")
    if np.any(np.diff(centers) <= MIN_CENTER_GAP_MHZ):
        reasons.append("centers not distinct")
    return FitResult(
        centers_mhz=centers,
        confidences_mhz=conf,
        widths_mhz=widths,
        contrasts=contrasts,
        baseline=float(p[0]),
        success=not reasons,
        converged=converged,
        iterations=iters,
        residual_norm=float(np.sqrt(rss)),
        reason="; ".join(reasons),
    )


# --- scoring --------------------------------------------------------------------


def weighted_error(truth: np.ndarray, centers: np.ndarray, confidences: np.ndarray) -> float:
    """(1/8) sum_j sqrt((y_j - yhat_j)^2 + c_j^2)."""
    return float(np.mean(np.sqrt((np.asarray(truth) - centers) ** 2 + np.asarray(confidences) ** 2)))


def summarize_fits(results: Sequence[FitResult], truths) -> BatchFitReport:
    truths = np.asarray(truths, dtype=float).reshape(len(results), N_RESONANCES)
    if len(results) == 0:
        raise ValueError("empty batch")
    errors = np.full(len(results), np.nan)
    for i, (res, y) in enumerate(zip(results, truths)):
        if not res.success or res.centers_mhz.size != N_RESONANCES:
            continue
        e = weighted_error(y, res.centers_mhz, res.confidences_mhz)
        if np.isfinite(e) and e <= ERROR_CAP_MHZ:
            errors[i] = e
    ok = np.isfinite(errors)
    p_success = float(ok.mean())
    mae = float(errors[ok].mean()) if ok.any() else float("nan")
    std = float(errors[ok].std()) if ok.any() else float("nan")
    norm_err = mae / math.sqrt(p_success) if p_success > 0 else float("nan")
    return BatchFitReport(list(results), errors, mae, p_success, norm_err, std)


def batch_fit(samples: Sequence[SpectrumSample], truths=None) -> BatchFitReport:
    if len(samples) == 0:
        raise ValueError("empty batch")
    if truths is None:
        truths = [s.truth.frequencies_mhz for s in samples]
    return summarize_fits([fit_lorentzians(s) for s in samples], truths)


def normalized_sensitivity(
    delta_nu_mhz: float, n_points: int, success_probability: float, consts: PhysicsConstants = DEFAULT_CONSTANTS
) -> float:
    """delta_nu * sqrt(T / P) / gamma with the measurement time T taken as the point count."""
    if not success_probability > 0:
        raise ValueError("sensitivity undefined for zero success probability")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    return delta_nu_mhz * np.sqrt(n_points / success_probability) / consts.gyromagnetic_ratio_mhz_per_gauss
