"""Penalized IRLS, GCV smoothing selection, model comparison and prediction."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, optimize, stats
from scipy.linalg.lapack import dpotrf as _potrf, dpotrs as _potrs
from scipy.special import xlogy

from .basis import MarginalBasis, tensor_term
from .data import Panel, person_years_offset
from .family import NBFamily, nb_logpmf
from .model_dsl import Family, ModelSpec
from .results import FitResult, TermInfo

logger = logging.getLogger(__name__)

LOG_LAMBDA_BOUNDS = (-15.0, 25.0)
LOG_PHI_BOUNDS = (math.log(1e-2), math.log(1e5))
LOG_PHI_TOL = 0.05
PHI_WINDOW = 1.0
INNER_STARTS = (0.0, 5.0)
MAX_OPTIMIZER_EVALS = 500
NM_XATOL = 0.1
NM_FATOL = 1e-5
NM_STEP = 2.0


class PirlsError(RuntimeError):
    """PIRLS failed; ``trajectory`` holds the penalized deviances seen."""

    def __init__(self, message, trajectory=()):
        super().__init__(message)
        self.trajectory = list(trajectory)


class RankDeficientError(PirlsError):
    pass


@dataclass
class PirlsResult:
    coefficients: np.ndarray
    deviance: float
    penalized_deviance: float
    edf: np.ndarray
    edf_per_block: np.ndarray
    trajectory: list
    iterations: int
    mu: np.ndarray
    ridge: bool = False

    @property
    def edf_total(self) -> float:
        return float(self.edf.sum())


def _family(phi) -> NBFamily:
    return NBFamily(math.inf if phi is None else phi)


def _factor(A, penalized, trajectory):
    """Lower Cholesky factor of ``A``; ridge only if a penalized system fails."""
    c, info = _potrf(A, lower=1, clean=0, overwrite_a=0)
    if info == 0:
        if not penalized:
            d = np.abs(np.diag(c))
            if d.min() <= 1e-7 * d.max():
                raise RankDeficientError("design is numerically rank deficient", trajectory)
        return c, False
    if not penalized:
        raise RankDeficientError(
            "penalized system is singular (no active penalty; collinear columns?)",
            trajectory)
    ridge = 1e-10 * np.trace(A)
    logger.warning("Cholesky failed; adding ridge %.3g", ridge)
    c, info = _potrf(A + ridge * np.eye(len(A)), lower=1, clean=0)
    if info != 0:
        raise PirlsError("penalized system is not positive definite", trajectory)
    return c, True


def _solve(c, b):
    return _potrs(c, b, lower=1)[0]


def penalty_matrix(penalties, log_lambdas, p) -> np.ndarray:
    S = np.zeros((p, p))
    for Sg, ll in zip(penalties, log_lambdas):
        S += math.exp(ll) * Sg
    return S


def pirls(X, penalties, log_lambdas, y, offset, phi, *, blocks=None, beta0=None,
          tol=1e-8, coef_tol=1e-8, max_iter=200) -> PirlsResult:
    """Penalized IRLS for a log-link NB (or Poisson, ``phi=inf``) model.

    Minimizes ``deviance(beta) + sum_g lambda_g * beta' S_g beta`` at fixed
    smoothing parameters and dispersion, by Fisher scoring with step halving.
    Iteration stops once the relative change in penalized deviance is below
    ``tol`` and the largest coefficient change is below
    ``coef_tol * (1 + max|beta|)``.

    Parameters
    ----------
    X : (n, p) array
        Full design including the intercept column.
    penalties : list of (p, p) arrays
    log_lambdas : sequence of float, one per penalty
    y, offset : (n,) arrays
    phi : float
        NB dispersion; ``math.inf`` for Poisson.
    blocks : list of slice, optional
        Column ranges whose effective degrees of freedom are summed into
        ``edf_per_block``.
    beta0 : (p,) array, optional
        Warm start. Without it iteration starts from ``mu = y + 0.5``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if len(penalties) != len(log_lambdas):
        raise ValueError("need one log lambda per penalty")
    if np.any(y < 0) or not np.all(np.isfinite(offset)):
        raise ValueError("y must be non-negative and offsets finite")
    phi = _family(phi).phi
    S = penalty_matrix(penalties, log_lambdas, X.shape[1])
    penalized = bool(len(penalties)) and bool(np.any(S))
    return _pirls_core(X, S, penalized, y, xlogy(y, y), offset, phi, blocks or [],
                       beta0, tol, coef_tol, max_iter)


def _pirls_core(X, S, penalized, y, ylogy, offset, phi, blocks, beta0, tol, coef_tol,
                max_iter, rotate=True) -> PirlsResult:
    # validation-free inner loop shared by pirls() and the GCV search
    p = X.shape[1]
    poisson = math.isinf(phi)
    rot = None
    if penalized and rotate:
        # work in the eigenbasis of S so the penalty is diagonal: with very
        # large lambdas the Cholesky error then scales with the conditioning
        # of the data part only
        idx = np.flatnonzero(np.any(S != 0.0, axis=0))
        s_eig, rot = np.linalg.eigh(S[np.ix_(idx, idx)])
        X = X.copy()
        X[:, idx] = X[:, idx] @ rot
        S = np.zeros((p, p))
        S[idx, idx] = np.maximum(s_eig, 0.0)
        if beta0 is not None:
            beta0 = np.array(beta0, dtype=float)
            beta0[idx] = rot.T @ beta0[idx]

    def objective(beta):
        # deviance as in nb_deviance, reusing log(mu) = lin
        eta = X @ beta
        lin = eta + offset
        if lin.max() > 700:
            return math.inf, eta, None, math.inf
        mu = np.exp(lin)
        if mu.min() <= 0:
            return math.inf, eta, None, math.inf
        if poisson:
            unit = ylogy - y * lin - (y - mu)
        else:
            unit = ylogy - y * lin - (y + phi) * np.log1p((y - mu) / (mu + phi))
        dev = 2.0 * float(np.maximum(unit, 0.0).sum())
        return dev + float(beta @ S @ beta), eta, mu, dev

    def weights(mu):
        return mu if poisson else mu / (1.0 + mu / phi)

    dev = math.nan
    trajectory = []
    ridge_used = False
    if beta0 is None:
        beta = None
        mu = y + 0.5
        eta = np.log(mu) - offset
        pen_old = math.inf
    else:
        beta = np.array(beta0, dtype=float)
        pen_old, eta, mu, dev = objective(beta)
        if mu is None:
            beta, mu = None, y + 0.5
            eta = np.log(mu) - offset
    converged = False
    it = 0
    while True:
        # weights and Hessian at the current iterate; once converged they
        # give the influence matrix, so the loop exits here
        w = weights(mu)
        XtW = X.T * w
        H = XtW @ X
        c, ridge = _factor(H + S, penalized, trajectory)
        ridge_used |= ridge
        if converged:
            break
        if it == max_iter:
            raise PirlsError(f"PIRLS did not converge in {max_iter} iterations; "
                             f"last penalized deviances {trajectory[-5:]}", trajectory)
        it += 1
        z = eta + (y - mu) / mu
        beta_new = _solve(c, XtW @ z)
        pen_new, eta_new, mu_new, dev_new = objective(beta_new)
        if beta is not None and pen_old < pen_new <= pen_old + tol * (abs(pen_old) + 0.1):
            # an increase below the convergence tolerance: ill-conditioning
            # noise, so the previous iterate is the optimum
            trajectory.append(pen_old)
            break
        halvings = 0
        while beta is not None and not pen_new <= pen_old * (1 + 1e-14):
            halvings += 1
            if halvings > 40:
                break
            beta_new = 0.5 * (beta + beta_new)
            pen_new, eta_new, mu_new, dev_new = objective(beta_new)
        if beta is not None and halvings > 40:
            # no descent direction left: already at the optimum to rounding
            beta_new, pen_new, eta_new, mu_new, dev_new = beta, pen_old, eta, mu, dev
        if mu_new is None:
            raise PirlsError("PIRLS diverged (linear predictor overflow)", trajectory)
        trajectory.append(pen_new)
        step = math.inf if beta is None else float(np.max(np.abs(beta_new - beta)))
        rel = abs(pen_old - pen_new) / (abs(pen_new) + 0.1) if beta is not None else math.inf
        beta, eta, mu, pen_old, dev = beta_new, eta_new, mu_new, pen_new, dev_new
        converged = rel < tol and step <= coef_tol * (1.0 + float(np.max(np.abs(beta))))

    F = _solve(c, H)
    if rot is not None:
        beta = beta.copy()
        beta[idx] = rot @ beta[idx]
        # diag(V F V') with V the block rotation
        F[idx, :] = rot @ F[idx, :]
        F[:, idx] = F[:, idx] @ rot.T
    edf = np.diag(F).copy()
    edf_blocks = np.array([edf[b].sum() for b in blocks])
    return PirlsResult(beta, dev, pen_old, edf, edf_blocks, trajectory, it, mu, ridge_used)


def gcv_score(deviance: float, n: int, edf_total: float) -> float:
    """Deviance-based generalized cross validation, ``n D / (n - edf)^2``."""
    if edf_total >= n:
        raise ValueError(f"edf {edf_total} must be below n = {n}")
    return n * deviance / (n - edf_total) ** 2


# ---------------------------------------------------------------------------
# design assembly


@dataclass
class ModelData:
    y: np.ndarray
    offset: np.ndarray
    columns: dict
    n_dropped: int
    order: np.ndarray


def _frame_of(panel) -> pd.DataFrame:
    return panel.frame if isinstance(panel, Panel) else panel


def offset_values(spec: ModelSpec, frame: pd.DataFrame) -> np.ndarray:
    rule = spec.offset_rule
    if rule.kind == "person-years":
        if "offset" in frame.columns:
            return frame["offset"].to_numpy(dtype=float)
        return person_years_offset(frame["popsize"].to_numpy(dtype=float))
    if rule.kind == "none":
        return np.zeros(len(frame))
    return frame[rule.column].to_numpy(dtype=float)


def model_data(spec: ModelSpec, panel) -> ModelData:
    """Pull response, offset and covariates; drop incomplete rows.

    Rows are put in a canonical (sorted) order so that fits do not depend
    on the row order of the input.
    """
    frame = _frame_of(panel)
    needed = [spec.response] + spec.variables
    missing = [c for c in needed if c not in frame.columns]
    if spec.offset_rule.kind == "column" and spec.offset_rule.column not in frame.columns:
        missing.append(spec.offset_rule.column)
    if missing:
        raise KeyError(f"panel lacks column(s): {', '.join(missing)}")
    y = frame[spec.response].to_numpy(dtype=float)
    off = offset_values(spec, frame)
    cols = {c: frame[c].to_numpy(dtype=float) for c in spec.variables}
    ok = np.isfinite(y) & np.isfinite(off)
    for v in cols.values():
        ok &= np.isfinite(v)
    n_dropped = int((~ok).sum())
    if n_dropped:
        logger.warning("dropping %d row(s) with missing model variables", n_dropped)
    keys = [v[ok] for v in reversed(list(cols.values()))] + [off[ok], y[ok]]
    order = np.flatnonzero(ok)[np.lexsort(keys)]
    return ModelData(y[order], off[order], {c: v[order] for c, v in cols.items()},
                     n_dropped, order)


@dataclass
class Design:
    X: np.ndarray
    penalties: list
    blocks: list
    terms: list
    coefficient_names: list
    lambda_labels: list


def build_design(spec: ModelSpec, md: ModelData) -> Design:
    n = len(md.y)
    cols = [np.ones(n)] + [md.columns[c] for c in spec.parametric_terms]
    names = ["(Intercept)"] + list(spec.parametric_terms)
    p0 = len(cols)
    blocks_raw = []
    for term in spec.smooth_terms:
        marginals = []
        for group, k in zip(term.groups(), term.basis_dims):
            for var in group:
                marginals.append(MarginalBasis.from_data(md.columns[var], k))
        blocks_raw.append(tensor_term(marginals, term.d_groups,
                                      [md.columns[v] for v in term.variables],
                                      label=term.label, variables=term.variables))
    p = p0 + sum(b.n_cols for b in blocks_raw)
    X = np.empty((n, p))
    X[:, :p0] = np.column_stack(cols)
    penalties, blocks, terms, labels = [], [], [], []
    at = p0
    for term, blk in zip(spec.smooth_terms, blocks_raw):
        sl = slice(at, at + blk.n_cols)
        X[:, sl] = blk.design
        XtX_norm = np.linalg.norm(blk.design.T @ blk.design)
        scales = []
        for gi, (S, grp) in enumerate(zip(blk.penalties, term.groups())):
            # rescale so lambda = 1 weighs the penalty like the block's data
            sc = XtX_norm / np.linalg.norm(S)
            scales.append(float(sc))
            full = np.zeros((p, p))
            full[sl, sl] = sc * S
            penalties.append(full)
            labels.append(f"{term.label}:{'+'.join(grp)}")
        names += [f"{term.label}.{j + 1}" for j in range(blk.n_cols)]
        blocks.append(sl)
        terms.append(TermInfo(term.label, term.variables, term.d_groups, blk.marginals,
                              blk.column_sums, at, tuple(scales)))
        at += blk.n_cols
    return Design(X, penalties, blocks, terms, names, labels)


def prediction_matrix(fit: FitResult, columns: dict, n: int | None = None) -> np.ndarray:
    """Design rows (intercept, parametric, constrained smooths) for new data.

    ``n`` is only needed when ``columns`` is empty (intercept-only models).
    """
    if n is None:
        n = len(next(iter(columns.values()))) if columns else 1
    parts = [np.ones((n, 1))]
    parts += [np.asarray(columns[c], dtype=float)[:, None] for c in fit.spec.parametric_terms]
    for t in fit.terms:
        parts.append(t.design([np.asarray(columns[v], dtype=float) for v in t.variables]))
    return np.hstack(parts)


# ---------------------------------------------------------------------------
# smoothing and dispersion selection


@dataclass
class _Candidate:
    log_lambdas: np.ndarray
    result: PirlsResult
    gcv: float


def _golden_max(f, a, b, tol):
    """Golden-section search for the maximum of a unimodal ``f`` on [a, b]."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)


def _better(a: _Candidate, b: _Candidate | None) -> bool:
    if b is None:
        return True
    scale = max(abs(a.gcv), abs(b.gcv), 1e-300)
    if abs(a.gcv - b.gcv) <= 1e-12 * scale:
        # ties go to the smoother model
        return float(np.sum(a.log_lambdas)) > float(np.sum(b.log_lambdas))
    return a.gcv < b.gcv


class _InnerProblem:
    """GCV minimization over log smoothing parameters at a fixed dispersion."""

    def __init__(self, design: Design, md: ModelData, phi):
        self.design = design
        self.md = md
        self.phi = phi
        self.n = len(md.y)
        self.beta = None
        self.evaluations = 0
        self.memo = {}
        self.ylogy = xlogy(md.y, md.y)

    def evaluate(self, theta) -> _Candidate:
        theta = np.clip(np.asarray(theta, dtype=float), *LOG_LAMBDA_BOUNDS)
        # warm starts make repeat evaluations differ in the last digits; a
        # collapsed simplex then never meets fatol, so repeats are memoized
        key = (self.phi, theta.tobytes())
        if key in self.memo:
            return self.memo[key]
        d = self.design
        S = penalty_matrix(d.penalties, theta, d.X.shape[1])
        r = _pirls_core(d.X, S, bool(d.penalties), self.md.y, self.ylogy, self.md.offset, self.phi,
                        d.blocks, self.beta, 1e-8, math.inf, 200, rotate=False)
        self.beta = r.coefficients
        self.evaluations += 1
        edf = r.edf_total
        g = gcv_score(r.deviance, self.n, edf) if edf < self.n else math.inf
        self.memo[key] = cand = _Candidate(theta, r, g)
        return cand

    def solve(self):
        m = len(self.design.penalties)
        if m == 0:
            return self.evaluate(np.zeros(0)), True
        best, ok = None, True
        for start in INNER_STARTS:
            seen = {}
            x0 = np.full(m, start)
            simplex = np.vstack([x0] + [x0 + NM_STEP * e for e in np.eye(m)])
            ref = []

            def objective(theta):
                cand = self.evaluate(theta)
                seen[tuple(np.asarray(theta, dtype=float))] = cand
                if not ref:
                    ref.append(cand.gcv if np.isfinite(cand.gcv) and cand.gcv > 0 else 1.0)
                return cand.gcv / ref[0]

            res = optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"initial_simplex": simplex, "xatol": NM_XATOL, "fatol": NM_FATOL,
                         "maxfev": MAX_OPTIMIZER_EVALS})
            ok &= bool(res.success)
            cand = seen.get(tuple(res.x)) or self.evaluate(res.x)
            for c in seen.values():
                if _better(c, cand):
                    cand = c
            if _better(cand, best):
                best = cand
        return best, ok


def _loglik(y, mu, phi) -> float:
    return float(np.sum(nb_logpmf(y, mu, phi)))


def _pilot_log_phi(y, mu) -> float:
    """Maximum-likelihood log dispersion with the means held fixed."""
    res = optimize.minimize_scalar(lambda t: -_loglik(y, mu, math.exp(t)),
                                   bounds=LOG_PHI_BOUNDS, method="bounded",
                                   options={"xatol": 1e-3})
    return float(res.x)


def fit_fixed(spec: ModelSpec, panel, log_lambdas, phi) -> FitResult:
    """Fit at given smoothing parameters and dispersion (no selection)."""
    md = model_data(spec, panel)
    design = build_design(spec, md)
    theta = np.asarray(log_lambdas, dtype=float)
    r = pirls(design.X, design.penalties, theta, md.y, md.offset, phi, blocks=design.blocks)
    return _make_result(spec, md, design, _Candidate(theta, r, gcv_score(
        r.deviance, len(md.y), r.edf_total)), phi, True, "fixed smoothing", 1)


def _polish(design, md, cand, phi) -> _Candidate:
    """Refit the selected point to full coefficient accuracy."""
    r = pirls(design.X, design.penalties, cand.log_lambdas, md.y, md.offset, phi,
              blocks=design.blocks, beta0=cand.result.coefficients, tol=1e-13,
              coef_tol=1e-12)
    return _Candidate(cand.log_lambdas, r, gcv_score(r.deviance, len(md.y), r.edf_total))


def _make_result(spec, md, design, cand, phi, converged, message, evaluations):
    r = cand.result
    loglik = _loglik(md.y, r.mu, phi)
    n_params = r.edf_total + (0.0 if math.isinf(phi) else 1.0)
    return FitResult(
        coefficients=r.coefficients, log_lambdas=cand.log_lambdas, phi=float(phi),
        edf_total=r.edf_total, edf_per_term=r.edf_per_block, deviance=r.deviance,
        loglik=loglik, aic=-2.0 * loglik + 2.0 * n_params, gcv=cand.gcv,
        n_obs=len(md.y), converged=converged, spec=spec,
        coefficient_names=tuple(design.coefficient_names),
        lambda_labels=tuple(design.lambda_labels), terms=tuple(design.terms),
        n_dropped=md.n_dropped, message=message, evaluations=evaluations,
        extra={"fitted": r.mu, "order": md.order, "design": design},
    )


def select_smoothing(spec: ModelSpec, panel, *, phi=None) -> FitResult:
    """Fit ``spec`` to ``panel`` choosing smoothing and dispersion.

    Inner loop: log smoothing parameters by Nelder-Mead on GCV, started at
    0 and restarted from 5, each evaluation a full PIRLS fit. Outer loop
    (negative binomial only): golden-section search over log dispersion
    maximizing the log-likelihood at the inner optimum. Pass ``phi`` to hold
    the dispersion fixed. The result is deterministic and independent of
    row order.
    """
    md = model_data(spec, panel)
    design = build_design(spec, md)
    n, p = design.X.shape
    if n < 10 * p:
        warnings.warn(f"only {n} rows for {p} coefficients (fewer than 10 per coefficient)",
                      stacklevel=2)
    if spec.family is Family.POISSON:
        phi = math.inf
    evaluations = 0
    flags = []

    if phi is not None:
        inner = _InnerProblem(design, md, phi)
        cand, ok = inner.solve()
        evaluations += inner.evaluations
        if not ok:
            flags.append("smoothing optimizer hit its evaluation limit")
        best_phi = phi
    else:
        # the golden-section window is centred on a pilot estimate: the ML
        # dispersion given the means of a Poisson fit. It slides outward if
        # the maximum sits on an edge.
        inner = _InnerProblem(design, md, math.inf)
        pilot, _ = inner.solve()
        # snapped to the search tolerance so that rounding-level changes in
        # the data (e.g. a rescaled offset) leave the search points unchanged
        centre = LOG_PHI_TOL * round(_pilot_log_phi(md.y, pilot.result.mu) / LOG_PHI_TOL)
        memo = {}

        def profile(log_phi):
            inner.phi = math.exp(log_phi)
            cand, ok = inner.solve()
            ll = _loglik(md.y, cand.result.mu, inner.phi)
            memo[log_phi] = (ll, cand, ok, inner.phi)
            return ll

        lo, hi = LOG_PHI_BOUNDS
        a, b = max(lo, centre - PHI_WINDOW), min(hi, centre + PHI_WINDOW)
        while True:
            _golden_max(profile, a, b, LOG_PHI_TOL)
            top = max(memo, key=lambda k: (memo[k][0], k))
            if top - a < LOG_PHI_TOL and a > lo:
                a, b = max(lo, a - 2 * PHI_WINDOW), a + LOG_PHI_TOL
            elif b - top < LOG_PHI_TOL and b < hi:
                a, b = b - LOG_PHI_TOL, min(hi, b + 2 * PHI_WINDOW)
            else:
                break
        key = max(memo, key=lambda k: (memo[k][0], k))
        _, cand, ok, best_phi = memo[key]
        evaluations += inner.evaluations
        if not ok:
            flags.append("smoothing optimizer hit its evaluation limit")
    message = "; ".join(flags) if flags else "converged"
    cand = _polish(design, md, cand, best_phi)
    return _make_result(spec, md, design, cand, best_phi, not flags, message, evaluations)


# ---------------------------------------------------------------------------
# comparison and prediction


@dataclass(frozen=True)
class LrtResult:
    lrt_stat: float
    lrt_p: float
    log_p: float
    df: float
    delta_aic: float
    approximate: bool = True


def is_nested(small: ModelSpec, big: ModelSpec) -> bool:
    """Whether every component of ``small`` is representable in ``big``."""
    if small.response != big.response:
        return False
    big_sets = [set(t.variables) for t in big.smooth_terms]
    covered = set(big.parametric_terms).union(*big_sets) if big_sets else set(
        big.parametric_terms)
    if not set(small.parametric_terms) <= covered:
        return False
    return all(any(set(t.variables) <= s for s in big_sets) for t in small.smooth_terms)


def _n_params(fit: FitResult) -> float:
    return fit.edf_total + (0.0 if math.isinf(fit.phi) else 1.0)


def compare_models(fit_small: FitResult, fit_big: FitResult) -> LrtResult:
    """Approximate likelihood-ratio test with edf-difference degrees of freedom.

    Penalized fits break the usual chi-square theory, so the p-value is a
    rough guide only; ``log_p`` is reported to avoid underflow.
    """
    if not is_nested(fit_small.spec, fit_big.spec):
        raise ValueError("models are not nested")
    if fit_small.n_obs != fit_big.n_obs:
        raise ValueError("fits use different numbers of observations")
    stat = 2.0 * (fit_big.loglik - fit_small.loglik)
    if stat < -1e-6:
        raise ValueError(f"negative likelihood-ratio statistic {stat:.3g}; "
                         "the larger fit is worse (optimizer failure?)")
    stat = max(stat, 0.0)
    df = _n_params(fit_big) - _n_params(fit_small)
    if stat == 0.0:
        log_p = 0.0
    else:
        log_p = float(stats.chi2.logsf(stat, max(df, 1.0)))
    return LrtResult(stat, math.exp(log_p), log_p, df, fit_big.aic - fit_small.aic)


@dataclass(frozen=True)
class PredictionRow:
    linear_predictor: float
    rate: float
    covariate_values: dict


def predict_frame(fit: FitResult, rows, fixed=None) -> pd.DataFrame:
    """Vectorized prediction; returns ``rows`` plus link-scale and rate columns.

    ``fixed`` values override (or supply) columns, e.g. ``{"median_age": 38.8}``.
    The offset is not added, so rates are per 100,000 person-years.
    """
    rows = pd.DataFrame(rows).reset_index(drop=True)
    fixed = dict(fixed or {})
    cols = {}
    n = len(rows)
    for c in fit.spec.variables:
        if c in fixed:
            cols[c] = np.full(n, float(fixed[c]))
        elif c in rows.columns:
            cols[c] = rows[c].to_numpy(dtype=float)
        else:
            raise KeyError(f"prediction rows lack column {c!r}")
    out = rows.copy()
    for c, v in fixed.items():
        out[c] = float(v)
    eta = prediction_matrix(fit, cols, n) @ fit.coefficients if n else np.zeros(0)
    out["linear_predictor"] = eta
    out["rate_per_100k_py"] = np.exp(eta)
    return out


def domain_violations(fit: FitResult, columns: dict) -> list[tuple]:
    """``(row, column, value, lo, hi)`` for every value outside a smooth's domain."""
    out = []
    for t in fit.terms:
        for var, marg in zip(t.variables, t.marginals):
            x = np.asarray(columns[var], dtype=float)
            lo, hi = marg.domain
            for i in np.flatnonzero(~((x >= lo) & (x <= hi))):
                out.append((int(i), var, float(x[i]), float(lo), float(hi)))
    return sorted(set(out))


def predict(fit: FitResult, rows, fixed=None) -> list[PredictionRow]:
    frame = predict_frame(fit, rows, fixed)
    covs = frame[fit.spec.variables].astype(float).to_dict("records")
    return [PredictionRow(float(e), float(r), c) for e, r, c in
            zip(frame["linear_predictor"], frame["rate_per_100k_py"], covs)]
