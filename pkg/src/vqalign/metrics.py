"""Evaluation statistics: rank correlations, PLCC/RMSE, logistic fitting,
dataset-size weighting, and a paired significance test.

Everything here is a pure function of numpy arrays; nothing touches the
autodiff graph. The logistic fit follows common video-quality evaluation
practice: map predictions through a fitted 4-parameter logistic before
computing PLCC/RMSE so metrics are comparable across output scales.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import DegenerateDataError


def _as_vec(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DegenerateDataError(f"{name} must be a vector, got shape {x.shape}")
    return x


def _check_pair(x, y, min_n=2):
    x, y = _as_vec(x, "x"), _as_vec(y, "y")
    if x.shape != y.shape:
        raise DegenerateDataError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < min_n:
        raise DegenerateDataError(f"need at least {min_n} points, got {x.shape[0]}")
    return x, y


def _ranks(x):
    """Average ranks (1-based); tied values share their mean rank."""
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty_like(x)
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(x, y):
    """Pearson linear correlation."""
    x, y = _check_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc**2).sum()) * float((yc**2).sum()))
    if denom == 0.0:
        raise DegenerateDataError("correlation undefined for a constant vector")
    return float((xc * yc).sum()) / denom


def srocc(x, y):
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x, y = _check_pair(x, y)
    return plcc(_ranks(x), _ranks(y))


def krocc(x, y):
    """Kendall tau-b: tie-corrected concordant-minus-discordant pair count."""
    x, y = _check_pair(x, y)
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    sx, sy = dx[iu], dy[iu]
    concordant_minus_discordant = float((sx * sy).sum())
    n0 = len(sx)
    tied_x = int((sx == 0).sum())
    tied_y = int((sy == 0).sum())
    denom = math.sqrt((n0 - tied_x) * (n0 - tied_y))
    if denom == 0.0:
        raise DegenerateDataError("correlation undefined for a constant vector")
    return concordant_minus_discordant / denom


def rmse(x, y):
    x, y = _check_pair(x, y, min_n=1)
    return float(np.sqrt(((x - y) ** 2).mean()))


# -- logistic fitting ------------------------------------------------------


@dataclasses.dataclass
class Fit4PL:
    """Fitted logistic mos ~ (b1-b2)/(1+exp(-(pred-b3)/b4)) + b2."""

    beta: np.ndarray
    mapped: np.ndarray
    converged: bool
    sse: float


def _logistic4(pred, beta):
    b1, b2, b3, b4 = beta
    u = (pred - b3) / b4
    # clamped exponent keeps extreme arguments finite
    return (b1 - b2) / (1.0 + np.exp(np.clip(-u, -500.0, 500.0))) + b2


def _logistic4_jacobian(pred, beta):
    b1, b2, b3, b4 = beta
    u = (pred - b3) / b4
    s = 1.0 / (1.0 + np.exp(np.clip(-u, -500.0, 500.0)))
    ds = (b1 - b2) * s * (1.0 - s)
    return np.stack([s, 1.0 - s, -ds / b4, -ds * u / b4], axis=1)


def _damped_gauss_newton(pred, mos, beta0, max_iterations, tol):
    beta = beta0.copy()
    residual = _logistic4(pred, beta) - mos
    sse = float((residual**2).sum())
    best_beta, best_sse = beta.copy(), sse
    lam = 1e-3
    converged = False
    for _ in range(max_iterations):
        jac = _logistic4_jacobian(pred, beta)
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        accepted = False
        for _ in range(50):
            try:
                step = np.linalg.solve(jtj + lam * np.eye(4), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = beta + step
            if candidate[3] == 0.0:
                lam *= 10.0
                continue
            cand_res = _logistic4(pred, candidate) - mos
            cand_sse = float((cand_res**2).sum())
            if np.isfinite(cand_sse) and cand_sse <= sse:
                beta, residual, prev_sse, sse = candidate, cand_res, sse, cand_sse
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no descent direction left at any damping
            break
        if sse < best_sse:
            best_beta, best_sse = beta.copy(), sse
        if abs(prev_sse - sse) <= tol * max(prev_sse, 1e-300):
            converged = True
            break
    return best_beta, best_sse, converged


def fit_4pl(pred, mos, max_iterations=200, tol=1e-10) -> Fit4PL:
    """Least-squares 4-parameter logistic fit of pred onto the mos scale.

    Damped Gauss-Newton from a deterministic guess (b1=max mos, b2=min mos,
    b3=mean pred, b4=std pred); both slope orientations (+-b4) are tried and
    the better one kept, so decreasing relations fit as well as increasing
    ones. Falls back to the best iterate with converged=False if the
    iteration cap is hit.
    """
    pred, mos = _check_pair(pred, mos, min_n=5)
    spread = float(pred.std())
    if spread == 0.0:
        raise DegenerateDataError("logistic fit needs prediction spread")
    results = []
    for orientation in (1.0, -1.0):
        beta0 = np.array([mos.max(), mos.min(), pred.mean(), orientation * spread])
        results.append(_damped_gauss_newton(pred, mos, beta0, max_iterations, tol))
    best_beta, best_sse, converged = min(results, key=lambda r: r[1])
    return Fit4PL(
        beta=best_beta,
        mapped=_logistic4(pred, best_beta),
        converged=converged,
        sse=best_sse,
    )


# -- aggregation -----------------------------------------------------------


def weighted_overall(per_dataset):
    """Dataset-size weighted mean of (metric, n) pairs."""
    pairs = list(per_dataset)
    if not pairs:
        raise DegenerateDataError("weighted overall needs at least one dataset")
    total_n = sum(n for _, n in pairs)
    if total_n <= 0:
        raise DegenerateDataError("weighted overall needs positive sizes")
    return sum(m * n for m, n in pairs) / total_n


# -- significance ----------------------------------------------------------


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            break
    return h


def _betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-12."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def paired_t_test(a, b):
    """Two-sided paired t-test; returns (t statistic, p-value)."""
    a, b = _check_pair(a, b)
    d = a - b
    n = len(d)
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise DegenerateDataError("paired differences have zero variance")
    t = float(d.mean()) / (sd / math.sqrt(n))
    df = n - 1
    p = _betainc_reg(0.5 * df, 0.5, df / (df + t * t))
    return t, p


# -- reports ---------------------------------------------------------------


@dataclasses.dataclass
class DatasetMetrics:
    srocc: float
    krocc: float
    plcc: float
    rmse: float
    n: int


@dataclasses.dataclass
class EvalReport:
    """Per-dataset metrics plus dataset-size-weighted summaries."""

    per_dataset: dict
    weighted_srocc: float
    weighted_plcc: float
    run_index: int | None = None


def build_report(per_dataset, run_index=None) -> EvalReport:
    pairs_s = [(m.srocc, m.n) for m in per_dataset.values()]
    pairs_p = [(m.plcc, m.n) for m in per_dataset.values()]
    return EvalReport(
        per_dataset=dict(per_dataset),
        weighted_srocc=weighted_overall(pairs_s),
        weighted_plcc=weighted_overall(pairs_p),
        run_index=run_index,
    )
