"""B-spline marginals, difference penalties and tensor-product term blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Evaluation points outside a basis domain. ``bad`` indexes them."""

    def __init__(self, message, bad):
        super().__init__(message)
        self.bad = np.asarray(bad)


@dataclass(frozen=True, eq=False)
class MarginalBasis:
    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        d = self.degree
        if d < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or np.any(np.diff(knots) < 0):
            raise ValueError("knots must be a non-decreasing vector")
        if self.num_basis < d + 1:
            raise ValueError("degenerate knot vector: too few knots for degree")
        if np.any(knots[:d + 1] != knots[0]) or np.any(knots[-d - 1:] != knots[-1]):
            raise ValueError("degenerate knot vector: ends must be clamped")
        if knots[-1] <= knots[0]:
            raise ValueError("degenerate knot vector: empty domain")

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @classmethod
    def from_data(cls, x, num_basis: int, degree: int = 3) -> "MarginalBasis":
        """Clamped basis with interior knots at quantiles of the unique ``x``.

        The degree drops below ``degree`` when ``num_basis`` is too small
        to hold it (``num_basis=3`` gives a quadratic basis).
        """
        x = np.asarray(x, dtype=float)
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise ValueError("knot placement needs finite data")
        degree = min(degree, num_basis - 1)
        n_inner = num_basis - degree - 1
        ux = np.unique(x)
        if len(ux) < n_inner + 2:
            raise ValueError(
                f"{len(ux)} distinct values cannot support {num_basis} basis functions")
        lo, hi = ux[0], ux[-1]
        inner = np.quantile(ux, np.linspace(0.0, 1.0, n_inner + 2)[1:-1])
        if n_inner and (np.any(np.diff(inner) <= 0) or inner[0] <= lo or inner[-1] >= hi):
            raise ValueError("degenerate knot vector from quantile placement")
        knots = np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])
        return cls(knots, degree)

    def to_dict(self):
        return {"knots": self.knots.tolist(), "degree": self.degree}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["knots"], dtype=float), int(d["degree"]))


def bspline_design(x, basis: MarginalBasis) -> np.ndarray:
    """Evaluate every B-spline of ``basis`` at ``x`` (Cox-de Boor recursion).

    Returns an ``(n, num_basis)`` matrix whose rows sum to one. Points
    outside ``basis.domain`` raise :class:`DomainError`; nothing is
    extrapolated.
    """
    x = np.asarray(x, dtype=float).ravel()
    t = basis.knots
    lo, hi = basis.domain
    bad = np.flatnonzero(~((x >= lo) & (x <= hi)))
    if bad.size:
        raise DomainError(
            f"{bad.size} value(s) outside basis domain [{lo}, {hi}], "
            f"e.g. {x[bad[:5]].tolist()}", bad)
    # degree-0 indicators on half-open spans; the right end joins the last
    # non-empty span
    n_span = len(t) - 1
    B = ((t[:-1][None, :] <= x[:, None]) & (x[:, None] < t[1:][None, :])).astype(float)
    last = np.flatnonzero(t[:-1] < t[1:])[-1]
    B[x == hi, :] = 0.0
    B[x == hi, last] = 1.0
    for d in range(1, basis.degree + 1):
        m = n_span - d
        left_den = t[d:d + m] - t[:m]
        right_den = t[d + 1:d + 1 + m] - t[1:1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(left_den > 0, (x[:, None] - t[:m]) / left_den, 0.0)
            b = np.where(right_den > 0, (t[d + 1:d + 1 + m] - x[:, None]) / right_den, 0.0)
        B = a * B[:, :m] + b * B[:, 1:m + 1]
    return B


def difference_penalty(num_basis: int, order: int) -> np.ndarray:
    """``D.T @ D`` for the ``order``-th forward difference operator ``D``."""
    if order < 1:
        raise ValueError("order must be at least 1")
    if order >= num_basis:
        raise ValueError(f"order {order} needs more than {num_basis} basis functions")
    D = np.diff(np.eye(num_basis), n=order, axis=0)
    return D.T @ D


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def row_kron(blocks) -> np.ndarray:
    """Row-wise Kronecker product; the last block varies fastest."""
    out = blocks[0]
    n = out.shape[0]
    for b in blocks[1:]:
        if b.shape[0] != n:
            raise ValueError("mismatched column lengths")
        out = (out[:, :, None] * b[:, None, :]).reshape(n, -1)
    return out


def sum_to_zero_basis(column_sums) -> np.ndarray:
    """Orthonormal basis ``Z`` of the null space of ``column_sums @ beta = 0``."""
    c = np.asarray(column_sums, dtype=float).reshape(-1, 1)
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


@dataclass(frozen=True, eq=False)
class TermBlock:
    """Constrained design columns and per-group penalties of one smooth."""

    design: np.ndarray
    penalties: list
    group_labels: list
    marginals: list
    variables: tuple
    d_groups: tuple
    column_sums: np.ndarray
    constraint: np.ndarray = field(repr=False)
    col_offset: int = 0
    label: str = ""

    @property
    def n_cols(self) -> int:
        return self.design.shape[1]

    def raw_design(self, columns) -> np.ndarray:
        """Unconstrained tensor design for new data columns."""
        if len(columns) != len(self.marginals):
            raise ValueError("need one data column per marginal")
        return row_kron([bspline_design(c, m) for c, m in zip(columns, self.marginals)])

    def predict_design(self, columns) -> np.ndarray:
        return self.raw_design(columns) @ self.constraint


def marginal_penalty(basis: MarginalBasis, order: int = 2) -> np.ndarray:
    return difference_penalty(basis.num_basis, min(order, basis.num_basis - 1))


def tensor_term(marginals, d_groups, data_columns, *, penalty_order=2,
                label="", variables=(), center=True) -> TermBlock:
    """Build the design and anisotropic penalties of a (tensor) smooth.

    One penalty per d-group: the group's marginal difference penalty
    Kronecker-padded with identities for every other variable. A 2-D group
    ties its two axes under one smoothing parameter,
    ``S_a (x) I_b + I_a (x) S_b``. With ``center`` the block is
    reparametrized so its columns sum to zero over ``data_columns``.
    """
    d_groups = tuple(int(d) for d in d_groups)
    if len(marginals) != len(data_columns):
        raise ValueError("need one data column per marginal")
    if sum(d_groups) != len(marginals):
        raise ValueError("d groups must sum to the number of variables")
    if any(d < 1 or d > 2 for d in d_groups):
        raise ValueError("each d group must hold 1 or 2 variables")
    lengths = {len(np.asarray(c)) for c in data_columns}
    if len(lengths) != 1:
        raise ValueError(f"mismatched column lengths {sorted(lengths)}")

    X = row_kron([bspline_design(c, m) for c, m in zip(data_columns, marginals)])
    eyes = [np.eye(m.num_basis) for m in marginals]
    penalties, labels, axis = [], [], 0
    for gi, d in enumerate(d_groups):
        S = 0.0
        for a in range(axis, axis + d):
            factors = list(eyes)
            factors[a] = marginal_penalty(marginals[a], penalty_order)
            S = S + _kron_all(factors)
        penalties.append(S)
        labels.append(f"{label}[{gi}]" if label else f"group{gi}")
        axis += d

    sums = X.sum(axis=0)
    Z = sum_to_zero_basis(sums) if center else np.eye(X.shape[1])
    penalties = [Z.T @ S @ Z for S in penalties]
    penalties = [0.5 * (S + S.T) for S in penalties]
    return TermBlock(X @ Z, penalties, labels, list(marginals), tuple(variables), d_groups,
                     sums, Z, label=label)
