"""Spatial and temporal autocorrelation diagnostics.

Moran's I on a unit adjacency graph with row-standardized weights, and
per-unit lagged autocorrelation of monthly rate series summarized by
population-weighted quantiles across units.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


class GraphError(ValueError):
    pass


class DiagnosticError(ValueError):
    pass


class ConstantFieldError(DiagnosticError):
    pass


@dataclass(frozen=True)
class NeighborGraph:
    """Undirected unit adjacency.

    ``neighbors`` maps every id in ``unit_ids`` to a sorted tuple of its
    neighbors; units without neighbors map to ``()``.
    """

    unit_ids: tuple
    neighbors: dict = field(repr=False)

    @property
    def edges(self) -> set:
        return {(a, b) for a, nb in self.neighbors.items() for b in nb if a < b}

    @property
    def weights(self) -> dict:
        """Row-standardized weights ``{i: {j: 1/deg(i)}}``."""
        return {a: {b: 1.0 / len(nb) for b in nb} for a, nb in self.neighbors.items() if nb}

    def degree(self, unit) -> int:
        return len(self.neighbors[unit])

    @classmethod
    def from_edges(cls, pairs: Iterable, roster: Iterable | None = None) -> "NeighborGraph":
        """Symmetrize and deduplicate id pairs.

        With a ``roster``, every edge endpoint must be on it and roster
        units without edges are kept as isolated.
        """
        known = None if roster is None else {str(r) for r in roster}
        adj = {u: set() for u in (known or ())}
        for a, b in pairs:
            a, b = str(a).strip(), str(b).strip()
            if a == b:
                raise GraphError(f"self-loop on unit {a!r}")
            if known is not None:
                for u in (a, b):
                    if u not in known:
                        raise GraphError(f"edge references unknown unit {u!r}")
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        ids = tuple(sorted(adj))
        return cls(ids, {u: tuple(sorted(adj[u])) for u in ids})


def build_neighbor_graph(edges_file, roster: Iterable | None = None) -> NeighborGraph:
    """Read a ``id_a,id_b`` edge-list CSV into a :class:`NeighborGraph`."""
    with open(edges_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["id_a", "id_b"]:
            raise GraphError(f"edge file header must be id_a,id_b, got {','.join(header)}")
        pairs = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2 or not row[0].strip() or not row[1].strip():
                raise GraphError(f"line {lineno}: expected two ids")
            pairs.append((row[0], row[1]))
    return NeighborGraph.from_edges(pairs, roster)


def lattice_graph(n_rows: int, n_cols: int, ids=None) -> NeighborGraph:
    """Rook adjacency on a grid; ids default to ``r{row}c{col}``."""
    if ids is None:
        ids = [f"r{r}c{c}" for r in range(n_rows) for c in range(n_cols)]
    ids = [str(i) for i in ids]
    if len(ids) != n_rows * n_cols:
        raise ValueError("need one id per grid cell")
    pairs = []
    for r in range(n_rows):
        for c in range(n_cols):
            k = r * n_cols + c
            if c + 1 < n_cols:
                pairs.append((ids[k], ids[k + 1]))
            if r + 1 < n_rows:
                pairs.append((ids[k], ids[k + n_cols]))
    return NeighborGraph.from_edges(pairs, roster=ids)


# ---------------------------------------------------------------------------
# Moran's I


@dataclass(frozen=True)
class MoranResult:
    I: float
    neighbor_means: dict
    slope: float
    n_used: int
    n_isolated: int

    def summary(self) -> dict:
        return {"I": self.I, "slope": self.slope, "n_used": self.n_used,
                "n_isolated": self.n_isolated}


class _MoranOperator:
    """Sparse row-standardized weights over the units that carry values."""

    def __init__(self, values: Mapping, graph: NeighborGraph):
        present = {str(k): float(v) for k, v in values.items()}
        bad = [k for k, v in present.items() if not math.isfinite(v)]
        if bad:
            raise DiagnosticError(f"non-finite value for unit {bad[0]!r}")
        units = [u for u in graph.unit_ids if u in present]
        nbrs = {u: [v for v in graph.neighbors[u] if v in present] for u in units}
        self.used = [u for u in units if nbrs[u]]
        self.n_isolated = len(units) - len(self.used)
        if not self.used:
            raise DiagnosticError("every unit is isolated; Moran's I is undefined")
        if len(self.used) < 2:
            raise DiagnosticError("need at least two non-isolated units")
        pos = {u: i for i, u in enumerate(self.used)}
        rows, cols, w = [], [], []
        for u in self.used:
            deg = len(nbrs[u])
            for v in nbrs[u]:
                rows.append(pos[u])
                cols.append(pos[v])
                w.append(1.0 / deg)
        self.rows = np.array(rows)
        self.cols = np.array(cols)
        self.w = np.array(w)
        self.x = np.array([present[u] for u in self.used])

    def lag(self, x):
        """Weighted neighbor mean of ``x`` for each used unit."""
        return np.bincount(self.rows, weights=self.w * x[self.cols], minlength=len(x))

    def statistic(self, x):
        z = x - x.mean()
        ss = float(z @ z)
        # rounding in the mean leaves ~1e-16 relative residue on a constant field
        if ss <= len(x) * (1e-12 * float(np.max(np.abs(x)))) ** 2:
            raise ConstantFieldError("values are constant; Moran's I is undefined")
        # row-standardized: S0 = n, so I = z'Wz / z'z
        return float(z @ self.lag(z)) / ss


def morans_i(values: Mapping, graph: NeighborGraph) -> MoranResult:
    """Moran's I with row-standardized weights.

    Parameters
    ----------
    values : mapping unit id -> float
        Units missing from the mapping are dropped from the graph. Units with
        no neighbor carrying a value are isolated: excluded and counted.
    graph : NeighborGraph

    Returns
    -------
    MoranResult
        ``neighbor_means`` holds the average of each used unit's neighbors;
        ``slope`` is the OLS slope of neighbor means on values, equal to
        ``I`` under row standardization.
    """
    op = _MoranOperator(values, graph)
    x = op.x
    I = op.statistic(x)
    nm = op.lag(x)
    xc = x - x.mean()
    slope = float(xc @ (nm - nm.mean())) / float(xc @ xc)
    return MoranResult(I, dict(zip(op.used, nm.tolist())), slope, len(op.used), op.n_isolated)


def moran_permutation(values: Mapping, graph: NeighborGraph, n_perm: int,
                      rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Observed I and its null distribution under random relabeling."""
    op = _MoranOperator(values, graph)
    observed = op.statistic(op.x)
    null = np.array([op.statistic(rng.permutation(op.x)) for _ in range(n_perm)])
    return observed, null


# ---------------------------------------------------------------------------
# temporal autocorrelation


def weighted_quantile(values, weights, probs):
    """Weighted quantiles by interpolating the cumulative-weight midpoints.

    Sorted value ``k`` sits at plotting position ``(C_k - w_k / 2) / W``
    where ``C_k`` is the running weight total; positions between are
    interpolated linearly and those outside clamp to the extremes. With
    equal weights this is the ``(k - 1/2) / n`` rule, so the median of an
    odd-sized sample is its middle value.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.ndim != 1 or not len(x):
        raise ValueError("values and weights must be equal-length non-empty vectors")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("weights must be finite, non-negative and not all zero")
    keep = w > 0
    x, w = x[keep], w[keep]
    order = np.argsort(x, kind="mergesort")
    x, w = x[order], w[order]
    pos = (np.cumsum(w) - 0.5 * w) / w.sum()
    probs = np.asarray(probs, dtype=float)
    if np.any(~((probs >= 0) & (probs <= 1))):
        raise ValueError("probabilities must lie in [0, 1]")
    out = np.interp(probs, pos, x)
    return out if out.ndim else float(out)


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag (biased normalization)."""
    x = np.asarray(series, dtype=float)
    z = x - x.mean()
    denom = float(z @ z)
    if denom <= 0.0:
        raise DiagnosticError("constant series")
    return np.array([float(z[:-k] @ z[k:]) / denom for k in range(1, max_lag + 1)])


@dataclass(frozen=True)
class AcfSummary:
    lag: int
    per_unit_acf: dict
    weighted_quantiles: dict
    n_excluded: int = 0


def temporal_acf(panel, rate_column: str = "crude_rate", max_lag: int = 6,
                 weights: str | Mapping = "popsize",
                 levels=QUANTILE_LEVELS) -> list[AcfSummary]:
    """Per-unit lagged autocorrelation of a rate with weighted quantile bands.

    Parameters
    ----------
    panel : Panel or DataFrame
        Needs ``unit_id``, ``month`` and ``rate_column``. Each unit's months
        must be consecutive and number at least ``max_lag + 2``.
    weights : str or mapping
        A column averaged within unit (population by default) or a mapping
        unit id -> weight.

    Units whose series is constant have no autocorrelation; they are left
    out and counted in ``n_excluded``.
    """
    frame = getattr(panel, "frame", panel)
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    if rate_column not in frame.columns:
        raise KeyError(f"panel lacks column {rate_column!r}")
    df = frame.sort_values(["unit_id", "month"], kind="mergesort")
    if isinstance(weights, str):
        unit_w = df.groupby("unit_id")[weights].mean().to_dict()
    else:
        unit_w = {str(k): float(v) for k, v in weights.items()}
    per_unit, w_used, excluded = {}, {}, 0
    for unit, g in df.groupby("unit_id", sort=True):
        months = g["month"].to_numpy()
        rates = g[rate_column].to_numpy(dtype=float)
        if len(rates) < max_lag + 2:
            raise DiagnosticError(f"unit {unit} has {len(rates)} months; "
                                  f"need at least {max_lag + 2}")
        if np.any(np.diff(months) != 1):
            raise DiagnosticError(f"unit {unit} has gaps in its months")
        if not np.all(np.isfinite(rates)):
            raise DiagnosticError(f"unit {unit} has non-finite rates")
        try:
            per_unit[unit] = acf(rates, max_lag)
        except DiagnosticError:
            excluded += 1
            continue
        if unit not in unit_w:
            raise KeyError(f"no weight for unit {unit}")
        w_used[unit] = unit_w[unit]
    if not per_unit:
        raise DiagnosticError("no unit has a non-constant series")
    units = sorted(per_unit)
    w = np.array([w_used[u] for u in units])
    out = []
    for k in range(max_lag):
        vals = np.array([per_unit[u][k] for u in units])
        q = weighted_quantile(vals, w, levels)
        out.append(AcfSummary(k + 1, dict(zip(units, vals.tolist())),
                              dict(zip(levels, np.atleast_1d(q).tolist())), excluded))
    return out


def acf_frame(summaries: list[AcfSummary]) -> pd.DataFrame:
    """One row per lag: quantile columns ``q05``..``q95`` plus unit count."""
    rows = []
    for s in summaries:
        row = {"lag": s.lag, "n_units": len(s.per_unit_acf), "n_excluded": s.n_excluded}
        row.update({f"q{int(round(p * 100)):02d}": v for p, v in s.weighted_quantiles.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def month_field(panel, month: int, column: str = "crude_rate") -> dict:
    """``{unit: value}`` for one month index."""
    frame = getattr(panel, "frame", panel)
    sub = frame.loc[frame["month"] == month, ["unit_id", column]]
    if sub.empty:
        raise DiagnosticError(f"no rows for month index {month}")
    sub = sub[np.isfinite(sub[column].to_numpy(dtype=float))]
    return dict(zip(sub["unit_id"].astype(str), sub[column].astype(float)))
