"""Nonlinear least-squares extraction of phase-decomposition parameters.

The per-subcarrier phase reported by a Wi-Fi receiver is the true channel
phase contaminated by the radio front end.  It decomposes into a bounded
arctangent ripple (receiver gain and phase mismatch driven by a timing
offset) plus a linear trend (cumulative delay) and a constant offset:

    phase(k) = atan(eps_g * sin(2*pi*f_s*k*zeta + eps_theta)
                    / cos(2*pi*f_s*k*zeta))
               - 2*pi*f_s*k*lam + beta          for k = 1..n_sc

This module fits the five parameters to an unwrapped phase vector with a
damped Gauss-Newton (Levenberg-Marquardt) loop and turns a packet trace
into a per-packet gain-mismatch series, dropping packets whose fitted
delay is an outlier (stale packets collected outside the channel's
coherence window show up as delay jumps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .channel import CsiTrace

__all__ = [
    "ChannelParams",
    "DEFAULT_PARAMS",
    "FitResult",
    "ParameterSeries",
    "FitDegeneracyError",
    "EmptySeriesError",
    "phase_model",
    "phase_model_jacobian",
    "unwrap_phase",
    "fit_phase_params",
    "extract_eps_g",
    "series_to_text",
    "series_from_text",
]

TWO_PI = 2.0 * math.pi

# Delay-outlier rule: drop a packet when its fitted delay deviates from the
# series median by more than MAD_MULTIPLIER * MAD, with an absolute floor so
# a tightly clustered series does not start rejecting its own jitter.
MAD_MULTIPLIER = 5.0
DELAY_THRESHOLD_FLOOR = 1e-3

# The timing offset sets the frequency of the arctangent ripple, so the
# error surface has spurious minima roughly one ripple-alignment apart.
# When the primary descent settles above the trigger residual, a rescan
# kicks in: the delay and offset terms are linear in the model, so a fine
# grid of (timing offset, gain) candidates is scored with closed-form
# line fits and only the best few are polished.  The thorough trigger
# rescans anything short of an essentially exact fit; the fast trigger
# only rescues fits that are badly off, which is the right trade for the
# per-packet extraction path where a small gain error just becomes one
# more noisy sample for the quantizer.
THOROUGH_TRIGGER = 1e-9
FAST_TRIGGER = 0.08
ZETA_SCAN_SPAN = 0.4
ZETA_SCAN_POINTS = 1601
ZETA_SCAN_SEPARATION = 16
THOROUGH_SCAN = {"factors": (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3), "polish": 8}
FAST_SCAN = {"factors": (0.8, 1.0, 1.2), "polish": 4}

# After convergence the fit can still sit on a tiny ripple bump inside the
# nearly flat valley that trades timing offset against phase mismatch.
# Probing along the flattest directions of the normal matrix and
# restarting from any lower point slides the fit down the valley floor.
VALLEY_PROBE_STEPS = (1e-5, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2)
VALLEY_PROBE_ROUNDS = 6


class FitDegeneracyError(RuntimeError):
    """Raised when the model or its Jacobian is singular for a fit."""


class EmptySeriesError(RuntimeError):
    """Raised when every packet of a trace was dropped during extraction."""


@dataclass(frozen=True)
class ChannelParams:
    """Five-parameter decomposition of a measured CSI phase vector.

    Attributes
    ----------
    eps_g : float
        Receiver gain mismatch, the amplitude of the arctangent ripple.
    zeta : float
        Timing offset, the ripple frequency across subcarriers.
    eps_theta : float
        Receiver phase mismatch in radians.
    lam : float
        Cumulative delay (time of flight + packet detection + sampling
        frequency offset), the slope of the linear trend.
    beta : float
        Constant phase offset in radians.
    """

    eps_g: float
    zeta: float
    eps_theta: float
    lam: float
    beta: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.eps_g, self.zeta, self.eps_theta, self.lam, self.beta],
            dtype=float,
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ChannelParams":
        eps_g, zeta, eps_theta, lam, beta = (float(v) for v in values)
        return cls(eps_g, zeta, eps_theta, lam, beta)


#: Nominal line-of-sight operating point, used to seed every fit.
DEFAULT_PARAMS = ChannelParams(
    eps_g=0.512,
    zeta=-0.02812,
    eps_theta=-0.006355,
    lam=-0.02762,
    beta=0.1326,
)


@dataclass(frozen=True)
class FitResult:
    """Outcome of one least-squares fit."""

    params: ChannelParams
    residual: float  # sum of squared errors at the returned parameters
    iterations: int
    converged: bool


@dataclass
class ParameterSeries:
    """Per-packet gain-mismatch values surviving the delay filter.

    ``entries`` holds ``(packet_index, eps_g)`` pairs in packet order;
    ``dropped`` lists the packet indices removed by fit failures or the
    delay-outlier rule.  Together they partition the fitted packet set.
    """

    entries: list[tuple[int, float]]
    dropped: list[int]

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries], dtype=float)


def _subcarrier_angles(n_sc: int, f_s: float) -> np.ndarray:
    # k runs 1..n_sc; k=0 would null the oscillatory terms on the first
    # subcarrier.
    return TWO_PI * f_s * np.arange(1, n_sc + 1, dtype=float)


def _model(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    eps_g, zeta, eps_theta, lam, beta = p
    ang = x * zeta
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = eps_g * np.sin(ang + eps_theta) / np.cos(ang)
        return np.arctan(ratio) - x * lam + beta


def _jacobian(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Columns follow the parameter order of ChannelParams.  The arctangent
    # columns are written over the common denominator cos^2 + (eps_g*sin)^2
    # so they stay finite where cos(ang) crosses zero.
    eps_g, zeta, eps_theta, _, _ = p
    ang = x * zeta
    c = np.cos(ang)
    s = np.sin(ang + eps_theta)
    denom = c * c + (eps_g * s) ** 2
    jac = np.empty((x.size, 5))
    jac[:, 0] = s * c / denom
    jac[:, 1] = eps_g * x * math.cos(eps_theta) / denom
    jac[:, 2] = eps_g * np.cos(ang + eps_theta) * c / denom
    jac[:, 3] = -x
    jac[:, 4] = 1.0
    return jac


def phase_model(params: ChannelParams, n_sc: int, f_s: float = 1.0) -> np.ndarray:
    """Evaluate the decomposition model at subcarriers 1..n_sc."""
    if n_sc < 1:
        raise ValueError(f"n_sc must be >= 1, got {n_sc}")
    if not f_s > 0:
        raise ValueError(f"f_s must be > 0, got {f_s}")
    return _model(params.as_array(), _subcarrier_angles(n_sc, f_s))


def phase_model_jacobian(
    params: ChannelParams, n_sc: int, f_s: float = 1.0
) -> np.ndarray:
    """Partial derivatives of the model, one row per subcarrier."""
    if n_sc < 1:
        raise ValueError(f"n_sc must be >= 1, got {n_sc}")
    if not f_s > 0:
        raise ValueError(f"f_s must be > 0, got {f_s}")
    return _jacobian(params.as_array(), _subcarrier_angles(n_sc, f_s))


def unwrap_phase(values: Sequence[float]) -> np.ndarray:
    """Add multiples of 2*pi so adjacent samples differ by less than pi."""
    return np.unwrap(np.asarray(values, dtype=float))


def _levenberg_marquardt(
    y: np.ndarray,
    x: np.ndarray,
    p0: np.ndarray,
    max_iterations: int,
    step_tol: float,
    grad_tol: float,
) -> tuple[np.ndarray, float, int, bool]:
    """Damped Gauss-Newton descent from one starting point."""
    p = p0.copy()
    f = _model(p, x) - y
    if not np.all(np.isfinite(f)):
        raise FitDegeneracyError("model is singular at the initial parameters")
    jac = _jacobian(p, x)
    if not np.all(np.isfinite(jac)):
        raise FitDegeneracyError("Jacobian is singular at the initial parameters")

    sse = float(f @ f)
    a = jac.T @ jac
    g = jac.T @ f
    mu = 1e-3 * float(np.max(np.diag(a)))
    if mu <= 0.0 or not math.isfinite(mu):
        mu = 1e-3
    nu = 2.0
    eye = np.eye(5)

    converged = bool(np.max(np.abs(g)) <= grad_tol)
    iterations = 0
    while not converged and iterations < max_iterations:
        iterations += 1
        try:
            step = np.linalg.solve(a + mu * eye, -g)
        except np.linalg.LinAlgError as exc:
            raise FitDegeneracyError("damped normal equations are singular") from exc
        if float(np.linalg.norm(step)) <= step_tol * (float(np.linalg.norm(p)) + step_tol):
            converged = True
            break
        p_new = p + step
        f_new = _model(p_new, x) - y
        if np.all(np.isfinite(f_new)):
            sse_new = float(f_new @ f_new)
            predicted = float(step @ (mu * step - g))
            rho = (sse - sse_new) / predicted if predicted > 0 else -1.0
        else:
            rho = -1.0
        if rho > 0:
            p = p_new
            f = f_new
            sse = sse_new
            jac = _jacobian(p, x)
            if not np.all(np.isfinite(jac)):
                raise FitDegeneracyError("Jacobian became singular during the fit")
            a = jac.T @ jac
            g = jac.T @ f
            converged = bool(np.max(np.abs(g)) <= grad_tol)
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
        else:
            mu *= nu
            nu *= 2.0
            if not math.isfinite(mu):
                raise FitDegeneracyError("damping overflow, fit cannot progress")
    return p, sse, iterations, converged


def _zeta_scan_candidates(
    y: np.ndarray, x: np.ndarray, p0: np.ndarray, factors: tuple, polish: int
) -> list[np.ndarray]:
    """Promising restart points for a fit stuck in a ripple side minimum.

    Sweeps the timing offset over a fine grid around the initial guess;
    for each candidate the remaining misfit after subtracting the
    arctangent ripple is a straight line in x, so the delay and offset
    solve in closed form and the whole sweep vectorizes.  The grid must
    be fine: when a ripple pole sits next to an integer subcarrier, the
    basin of the true offset is only a sliver between two branch flips.
    Returns the lowest-scoring, well-separated candidates as full
    parameter vectors.
    """
    eps_g0, zeta0, eps_theta = p0[0], p0[1], p0[2]
    scale = max(abs(zeta0), 0.01)
    grid = zeta0 + scale * np.linspace(-ZETA_SCAN_SPAN, ZETA_SCAN_SPAN, ZETA_SCAN_POINTS)
    ang = grid[:, None] * x[None, :]

    # Closed-form line fit r ~ -x*lam + beta, vectorized per grid row.
    n = float(x.size)
    sx = float(x.sum())
    sxx = float(x @ x)
    det = sxx * n - sx * sx

    all_scores = []
    all_lams = []
    all_betas = []
    gains = [eps_g0 * f for f in factors]
    for eps_g in gains:
        with np.errstate(divide="ignore", invalid="ignore"):
            ripple = np.arctan(eps_g * np.sin(ang + eps_theta) / np.cos(ang))
        r = y[None, :] - ripple
        b1 = -(r @ x)
        b2 = r.sum(axis=1)
        lams = (n * b1 + sx * b2) / det
        betas = (sx * b1 + sxx * b2) / det
        resid = r + lams[:, None] * x[None, :] - betas[:, None]
        scores = np.einsum("ij,ij->i", resid, resid)
        scores[~np.isfinite(scores)] = np.inf
        all_scores.append(scores)
        all_lams.append(lams)
        all_betas.append(betas)
    scores = np.concatenate(all_scores)
    lams = np.concatenate(all_lams)
    betas = np.concatenate(all_betas)

    candidates: list[np.ndarray] = []
    chosen: list[int] = []
    for i in np.argsort(scores):
        if not np.isfinite(scores[i]):
            break
        cell = int(i) % ZETA_SCAN_POINTS
        if any(abs(cell - j) < ZETA_SCAN_SEPARATION for j in chosen):
            continue
        chosen.append(cell)
        candidate = p0.copy()
        candidate[0] = gains[int(i) // ZETA_SCAN_POINTS]
        candidate[1] = grid[cell]
        candidate[3] = lams[i]
        candidate[4] = betas[i]
        candidates.append(candidate)
        if len(candidates) == polish:
            break

    # Second stage: at the best few timing offsets, sweep the gain finely
    # (again linear in delay and offset) so the polish starts within a
    # percent of the gain instead of a whole factor step away.
    fine_gains = eps_g0 * np.linspace(0.6, 1.4, 41)
    for cell in chosen[:3]:
        zeta = grid[cell]
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.sin(x * zeta + eps_theta) / np.cos(x * zeta)
        ripple = np.arctan(fine_gains[:, None] * base[None, :])
        r = y[None, :] - ripple
        b1 = -(r @ x)
        b2 = r.sum(axis=1)
        lam_fine = (n * b1 + sx * b2) / det
        beta_fine = (sx * b1 + sxx * b2) / det
        resid = r + lam_fine[:, None] * x[None, :] - beta_fine[:, None]
        fine_scores = np.einsum("ij,ij->i", resid, resid)
        fine_scores[~np.isfinite(fine_scores)] = np.inf
        k = int(np.argmin(fine_scores))
        if not np.isfinite(fine_scores[k]):
            continue
        candidate = p0.copy()
        candidate[0] = fine_gains[k]
        candidate[1] = zeta
        candidate[3] = lam_fine[k]
        candidate[4] = beta_fine[k]
        candidates.append(candidate)
    return candidates


def _valley_probe(
    y: np.ndarray, x: np.ndarray, p: np.ndarray, sse: float
) -> np.ndarray | None:
    """A strictly better restart point along the flattest directions, if any."""
    jac = _jacobian(p, x)
    if not np.all(np.isfinite(jac)):
        return None
    _, vectors = np.linalg.eigh(jac.T @ jac)
    best_point = None
    best_sse = sse * (1.0 - 1e-9)
    for direction in (vectors[:, 0], vectors[:, 1]):
        for step in VALLEY_PROBE_STEPS:
            for sign in (1.0, -1.0):
                candidate = p + sign * step * direction
                residual = _model(candidate, x) - y
                if not np.all(np.isfinite(residual)):
                    continue
                value = float(residual @ residual)
                if value < best_sse:
                    best_sse = value
                    best_point = candidate
    return best_point


def fit_phase_params(
    phase: Sequence[float],
    init: ChannelParams,
    f_s: float = 1.0,
    *,
    max_iterations: int = 200,
    step_tol: float = 1e-10,
    grad_tol: float = 1e-10,
    thorough: bool = True,
) -> FitResult:
    """Fit the five-parameter model to one unwrapped phase vector.

    Minimizes the sum of squared errors with a Levenberg-Marquardt loop.
    ``converged`` is set when the infinity norm of the gradient or the
    step size falls below its tolerance; hitting ``max_iterations`` first
    returns the best parameters seen with ``converged=False``.

    A descent that settles above the rescan trigger has been captured by
    a ripple-alignment side minimum; the fit is then repeated from a grid
    of timing-offset and gain candidates and the lowest-residual
    minimizer wins.  ``thorough`` (the default) rescans anything short of
    an essentially exact fit; ``thorough=False`` only rescues badly-off
    fits, trading worst-case parameter accuracy for per-packet speed.

    Raises
    ------
    FitDegeneracyError
        If the model or its Jacobian is non-finite at the initial point,
        or the damped normal equations cannot be solved.
    """
    y = np.asarray(phase, dtype=float)
    if y.ndim != 1 or y.size < 5:
        raise ValueError("phase vector must be 1-D with at least 5 samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("phase vector contains non-finite values")
    if not f_s > 0:
        raise ValueError(f"f_s must be > 0, got {f_s}")

    x = _subcarrier_angles(y.size, f_s)
    p0 = init.as_array()
    if not np.all(np.isfinite(p0)):
        raise ValueError("initial parameters contain non-finite values")

    best = _levenberg_marquardt(y, x, p0, max_iterations, step_tol, grad_tol)
    profile = THOROUGH_SCAN if thorough else FAST_SCAN
    if best[1] > (THOROUGH_TRIGGER if thorough else FAST_TRIGGER):
        for candidate in _zeta_scan_candidates(y, x, p0, profile["factors"], profile["polish"]):
            try:
                attempt = _levenberg_marquardt(
                    y, x, candidate, max_iterations, step_tol, grad_tol
                )
            except FitDegeneracyError:
                continue
            if attempt[1] < best[1]:
                best = attempt

    for _ in range(VALLEY_PROBE_ROUNDS):
        restart = _valley_probe(y, x, best[0], best[1])
        if restart is None:
            break
        try:
            attempt = _levenberg_marquardt(y, x, restart, max_iterations, step_tol, grad_tol)
        except FitDegeneracyError:
            break
        if attempt[1] >= best[1]:
            break
        best = attempt
    p, sse, iterations, converged = best
    return FitResult(
        params=ChannelParams.from_array(p),
        residual=sse,
        iterations=iterations,
        converged=converged,
    )


def extract_eps_g(
    trace: "CsiTrace",
    init: ChannelParams = DEFAULT_PARAMS,
    path: tuple[int, int] = (0, 0),
    f_s: float = 1.0,
    *,
    delay_threshold: float | None = None,
) -> ParameterSeries:
    """Fit every packet of a trace and keep the delay-consistent gain values.

    For each packet the phase of the selected antenna path is unwrapped
    across subcarriers and fitted.  Packets whose fit fails, does not
    converge, or whose fitted delay deviates from the series median by
    more than ``delay_threshold`` are dropped.  The default threshold is
    ``MAD_MULTIPLIER`` times the median absolute deviation of the fitted
    delays, floored at ``DELAY_THRESHOLD_FLOOR``.
    """
    if not trace.packets:
        raise ValueError("trace is empty")
    rx, tx = path
    first = trace.packets[0].csi
    if not (0 <= rx < first.n_rx and 0 <= tx < first.n_tx):
        raise ValueError(f"antenna path {path} out of bounds for {first.n_rx}x{first.n_tx}")

    fitted: list[tuple[int, float, float]] = []  # (index, eps_g, lam)
    dropped: list[int] = []
    for packet in trace.packets:
        phase = unwrap_phase(np.angle(packet.csi.entries[rx, tx, :]))
        try:
            result = fit_phase_params(phase, init, f_s, thorough=False)
        except FitDegeneracyError:
            dropped.append(packet.packet_index)
            continue
        if not result.converged:
            dropped.append(packet.packet_index)
            continue
        fitted.append((packet.packet_index, result.params.eps_g, result.params.lam))

    if not fitted:
        raise EmptySeriesError("all packets dropped, no gain series extracted")

    lams = np.array([lam for _, _, lam in fitted])
    median = float(np.median(lams))
    if delay_threshold is None:
        mad = float(np.median(np.abs(lams - median)))
        delay_threshold = max(MAD_MULTIPLIER * mad, DELAY_THRESHOLD_FLOOR)

    entries: list[tuple[int, float]] = []
    for index, eps_g, lam in fitted:
        if abs(lam - median) > delay_threshold:
            dropped.append(index)
        else:
            entries.append((index, eps_g))

    if not entries:
        raise EmptySeriesError("all packets dropped by the delay filter")
    return ParameterSeries(entries=entries, dropped=sorted(dropped))


def series_to_text(series: ParameterSeries) -> str:
    """Render a series as `packet_index eps_g` lines."""
    return "".join(f"{index} {value!r}\n" for index, value in series.entries)


def series_from_text(text: str) -> ParameterSeries:
    """Parse the `packet_index eps_g` line format."""
    entries: list[tuple[int, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 2:
            raise ValueError(f"line {lineno}: expected `packet_index eps_g`")
        entries.append((int(fields[0]), float(fields[1])))
    if not entries:
        raise ValueError("series text contains no entries")
    return ParameterSeries(entries=entries, dropped=[])
