"""Stationarity and Granger-causality diagnostics for per-epoch similarity curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# constant-only asymptotic critical values for the unit-root t statistic
ADF_CRITICAL = (("1%", -3.43), ("5%", -2.86), ("10%", -2.57))
MIN_LENGTH = 10


class AnalysisError(ValueError):
    pass


def _series(x, label="series") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise AnalysisError(f"{label}: expected a 1-d series")
    if not np.all(np.isfinite(x)):
        raise AnalysisError(f"{label}: non-finite values")
    return x


def difference(x, k: int = 1) -> np.ndarray:
    x = _series(x)
    if k < 0:
        raise AnalysisError("difference order must be nonnegative")
    if len(x) <= k:
        raise AnalysisError(f"difference of order {k} needs more than {k} values, got {len(x)}")
    return np.diff(x, n=k) if k else x.copy()


def ols(y: np.ndarray, X: np.ndarray):
    """Least squares with an explicit rank check; returns (beta, rss, XtX_inv)."""
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise AnalysisError("singular regression matrix")
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    resid = y - X @ beta
    return beta, float(resid @ resid), XtX_inv


@dataclass
class AdfResult:
    stat: float
    lags: int
    nobs: int
    rejected: str | None  # most stringent level rejected, None if none

    def rejects(self, level: str = "5%") -> bool:
        crit = dict(ADF_CRITICAL)[level]
        return self.stat < crit


def adf_test(x, lags: int = 2) -> AdfResult:
    """Unit-root t statistic from ``dy_t ~ 1 + y_{t-1} + dy_{t-1..t-p}``."""
    y = _series(x)
    n = len(y)
    if n < lags + MIN_LENGTH:
        raise AnalysisError(f"ADF with {lags} lags needs length >= {lags + MIN_LENGTH}, got {n}")
    dy = np.diff(y)
    rows = len(dy) - lags
    cols = [np.ones(rows), y[lags:-1]]
    for j in range(1, lags + 1):
        cols.append(dy[lags - j:len(dy) - j])
    X = np.column_stack(cols)
    target = dy[lags:]
    beta, rss, inv = ols(target, X)
    dof = rows - X.shape[1]
    if dof <= 0:
        raise AnalysisError("ADF regression has no residual degrees of freedom")
    sigma2 = rss / dof
    if sigma2 == 0:
        raise AnalysisError("singular regression matrix (perfect fit)")
    stat = float(beta[1] / np.sqrt(sigma2 * inv[1, 1]))
    rejected = next((lvl for lvl, c in ADF_CRITICAL if stat < c), None)
    return AdfResult(stat, lags, rows, rejected)


@dataclass
class GrangerResult:
    F: float
    lags: int
    nobs: int
    rss_restricted: float
    rss_unrestricted: float


def granger_f(x, y, lags: int = 2) -> GrangerResult:
    """F statistic for "lags of x help predict y" over the y-only autoregression."""
    x, y = _series(x, "x"), _series(y, "y")
    if len(x) != len(y):
        raise AnalysisError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(y)
    if n <= 2 * lags + 5:
        raise AnalysisError(f"Granger test with {lags} lags needs length > {2 * lags + 5}, got {n}")
    rows = n - lags
    ylags = [y[lags - j:n - j] for j in range(1, lags + 1)]
    xlags = [x[lags - j:n - j] for j in range(1, lags + 1)]
    target = y[lags:]
    Xr = np.column_stack([np.ones(rows)] + ylags)
    Xu = np.column_stack([np.ones(rows)] + ylags + xlags)
    _, rss_r, _ = ols(target, Xr)
    _, rss_u, _ = ols(target, Xu)
    dof = rows - 2 * lags - 1
    if rss_u == 0:
        raise AnalysisError("singular regression matrix (perfect fit)")
    F = ((rss_r - rss_u) / lags) / (rss_u / dof)
    return GrangerResult(float(max(F, 0.0)), lags, rows, rss_r, rss_u)


@dataclass
class Summary:
    mean: float
    variance: float
    ratio: float


def summarize(x) -> Summary:
    x = _series(x)
    if len(x) < 2:
        raise AnalysisError("summary needs at least 2 values")
    m = float(np.mean(x))
    v = float(np.var(x, ddof=1))
    if v == 0:
        raise AnalysisError("zero variance: mean/variance ratio undefined")
    return Summary(m, v, m / v)


# ---------------------------------------------------------------- reporting

@dataclass
class SeriesReport:
    label: str
    summary: Summary
    adf_level: AdfResult
    order: int
    adf_final: AdfResult


def make_stationary(x, lags: int = 2, max_order: int = 2, level: str = "5%"):
    """Difference until the ADF test rejects at ``level``; returns (order, level test, final test)."""
    x = _series(x)
    first = adf_test(x, lags)
    res, order = first, 0
    while not res.rejects(level) and order < max_order:
        order += 1
        res = adf_test(difference(x, order), lags)
    return order, first, res


@dataclass
class AnalysisReport:
    series: dict[str, SeriesReport]
    order: int
    granger: dict[str, GrangerResult]

    def text(self) -> str:
        out = []
        for r in self.series.values():
            s = r.summary
            out.append(f"{r.label}: mean={s.mean:.6g} var={s.variance:.6g} mean/var={s.ratio:.6g}")
            out.append(f"  ADF level t={r.adf_level.stat:.4f} rejects at {r.adf_level.rejected or 'none'}")
            out.append(f"  differenced {r.order}x: ADF t={r.adf_final.stat:.4f} rejects at "
                       f"{r.adf_final.rejected or 'none'}")
        out.append(f"Granger tests on series differenced {self.order}x:")
        for name, g in self.granger.items():
            out.append(f"  {name}: F={g.F:.4f} (lags={g.lags}, n={g.nobs})")
        return "\n".join(out)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("test", "series", "statistic", "detail"))
            for r in self.series.values():
                w.writerow(("mean", r.label, repr(r.summary.mean), ""))
                w.writerow(("variance", r.label, repr(r.summary.variance), ""))
                w.writerow(("mean_var_ratio", r.label, repr(r.summary.ratio), ""))
                w.writerow(("adf_level", r.label, repr(r.adf_level.stat), r.adf_level.rejected or "none"))
                w.writerow((f"adf_diff{r.order}", r.label, repr(r.adf_final.stat), r.adf_final.rejected or "none"))
            for name, g in self.granger.items():
                w.writerow(("granger_f", name, repr(g.F), f"lags={g.lags}"))


def analyze(ess, css, lags: int = 2) -> AnalysisReport:
    """ADF, difference to stationarity, then Granger in both directions."""
    ess, css = _series(ess, "ESS"), _series(css, "CSS")
    if len(ess) < MIN_LENGTH or len(css) < MIN_LENGTH:
        raise AnalysisError(f"length >= {MIN_LENGTH} required, got {min(len(ess), len(css))}")
    reports = {}
    orders = []
    for label, x in (("ESS", ess), ("CSS", css)):
        order, first, final = make_stationary(x, lags)
        reports[label] = SeriesReport(label, summarize(x), first, order, final)
        orders.append(order)
    k = max(orders)
    de, dc = difference(ess, k), difference(css, k)
    granger = {"CSS->ESS": granger_f(dc, de, lags), "ESS->CSS": granger_f(de, dc, lags)}
    return AnalysisReport(reports, k, granger)
