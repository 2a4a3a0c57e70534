"""County-month panel ingestion and derived covariates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CANONICAL_COLUMNS = [
    "fips", "month", "deaths", "popsize", "latitude", "longitude", "median_age",
    "median_income", "prop_poverty", "area_sqmi", "white_hi_inc_hh", "poc_lo_inc_hh",
    "total_hh", "rep_votes", "dem_votes", "total_votes",
]
MANDATORY_COLUMNS = ["fips", "month", "deaths", "popsize"]
# cross-sectional (ACS / election) measures: constant within a unit
UNIT_CONSTANT_COLUMNS = [
    "latitude", "longitude", "median_age", "median_income", "prop_poverty", "area_sqmi",
    "white_hi_inc_hh", "poc_lo_inc_hh", "total_hh", "rep_votes", "dem_votes", "total_votes",
]
DERIVED_COLUMNS = ["ICEraceinc", "political_lean", "log10_density", "offset",
                   "crude_rate", "time", "date"]

ORIGIN_YEAR, ORIGIN_MONTH = 2020, 3
PERSON_YEARS_UNIT = 1e5


class PanelError(ValueError):
    pass


def ice(privileged_count, deprived_count, total):
    """Index of Concentration at the Extremes, ``(privileged - deprived) / total``."""
    p = np.asarray(privileged_count, dtype=float)
    q = np.asarray(deprived_count, dtype=float)
    t = np.asarray(total, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("total must be positive")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("counts must be non-negative")
    if np.any(p + q > t * (1 + 1e-12)):
        raise ValueError("privileged + deprived counts exceed total")
    out = (p - q) / t
    return out if out.ndim else float(out)


def political_lean(rep_votes, dem_votes, total_votes):
    """(Republican - Democratic) / total votes cast; +1 all Republican."""
    r = np.asarray(rep_votes, dtype=float)
    d = np.asarray(dem_votes, dtype=float)
    t = np.asarray(total_votes, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("total votes must be positive")
    if np.any(r < 0) or np.any(d < 0) or np.any(r + d > t * (1 + 1e-12)):
        raise ValueError("vote counts must be non-negative and within the total")
    out = (r - d) / t
    return out if out.ndim else float(out)


def person_years_offset(popsize):
    """log of monthly exposure in units of 100,000 person-years."""
    pop = np.asarray(popsize, dtype=float)
    if np.any(~(pop > 0)):
        raise ValueError("popsize must be positive")
    out = np.log(pop / PERSON_YEARS_UNIT / 12.0)
    return out if out.ndim else float(out)


def crude_rate(deaths, popsize):
    """Deaths per 100,000 person-years for one month of exposure."""
    return np.asarray(deaths, dtype=float) / (np.asarray(popsize, dtype=float)
                                              / PERSON_YEARS_UNIT / 12.0)


def month_index(text: str) -> int:
    """``YYYY-MM`` to months since 2020-03."""
    year, sep, month = text.strip().partition("-")
    if not sep or len(year) != 4 or not (1 <= len(month) <= 2):
        raise ValueError(f"bad month {text!r}; expected YYYY-MM")
    y, m = int(year), int(month)
    if not 1 <= m <= 12:
        raise ValueError(f"bad month {text!r}")
    idx = (y - ORIGIN_YEAR) * 12 + (m - ORIGIN_MONTH)
    if idx < 0:
        raise ValueError(f"month {text!r} precedes 2020-03")
    return idx


def month_label(index: int) -> str:
    total = ORIGIN_YEAR * 12 + (ORIGIN_MONTH - 1) + int(index)
    return f"{total // 12:04d}-{total % 12 + 1:02d}"


@dataclass
class LoadReport:
    n_read: int = 0
    n_kept: int = 0
    dropped: dict = field(default_factory=dict)
    examples: list = field(default_factory=list)

    def drop(self, line, reason):
        self.dropped[reason] = self.dropped.get(reason, 0) + 1
        if len(self.examples) < 10:
            self.examples.append((line, reason))

    @property
    def n_dropped(self):
        return sum(self.dropped.values())

    def summary(self) -> str:
        if not self.dropped:
            return f"read {self.n_read} rows, kept all"
        parts = ", ".join(f"{k}: {v}" for k, v in sorted(self.dropped.items()))
        return f"read {self.n_read} rows, kept {self.n_kept}, dropped {self.n_dropped} ({parts})"


@dataclass(frozen=True, eq=False)
class Panel:
    """Validated long-format unit-month table.

    ``frame`` holds ``unit_id`` (str), ``month`` (int, months since
    2020-03), ``deaths``, ``popsize`` and every other column as float,
    plus derived columns (see ``DERIVED_COLUMNS``).
    """

    frame: pd.DataFrame
    report: LoadReport = field(default_factory=LoadReport)

    def __len__(self):
        return len(self.frame)

    @property
    def units(self) -> list[str]:
        return sorted(self.frame["unit_id"].unique())

    @property
    def raw_columns(self) -> list[str]:
        return [c for c in self.frame.columns if c not in DERIVED_COLUMNS]

    def equals(self, other: "Panel") -> bool:
        return self.frame.equals(other.frame)


def build_panel(frame: pd.DataFrame, report: LoadReport | None = None) -> Panel:
    """Validate raw columns and append derived ones.

    ``frame`` needs ``unit_id``, ``month`` (int index), ``deaths`` and
    ``popsize``; all other columns are covariates.
    """
    report = report or LoadReport(n_read=len(frame), n_kept=len(frame))
    df = frame[[c for c in frame.columns if c not in DERIVED_COLUMNS]].copy()
    df["unit_id"] = df["unit_id"].astype(str)
    df["month"] = df["month"].astype(np.int64)
    df["deaths"] = df["deaths"].astype(np.int64)
    df["popsize"] = df["popsize"].astype(np.int64)
    for c in df.columns:
        if c not in ("unit_id", "month", "deaths", "popsize"):
            df[c] = df[c].astype(float)
    if (df["popsize"] <= 0).any():
        raise PanelError("popsize must be positive")
    if (df["deaths"] < 0).any() or (df["deaths"] > df["popsize"]).any():
        raise PanelError("deaths must lie in [0, popsize]")
    dup = df.duplicated(["unit_id", "month"], keep=False)
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise PanelError(
            f"duplicate key (unit={row['unit_id']}, month={month_label(row['month'])})")
    for c in UNIT_CONSTANT_COLUMNS:
        if c in df.columns:
            spread = df.groupby("unit_id")[c].agg(lambda s: s.dropna().nunique())
            if (spread > 1).any():
                unit = spread.index[spread > 1][0]
                raise PanelError(f"column {c!r} varies across months within unit {unit}")
    df = df.sort_values(["unit_id", "month"], kind="mergesort").reset_index(drop=True)

    if {"white_hi_inc_hh", "poc_lo_inc_hh", "total_hh"} <= set(df.columns):
        ok = df[["white_hi_inc_hh", "poc_lo_inc_hh", "total_hh"]].notna().all(axis=1)
        vals = np.full(len(df), np.nan)
        if ok.any():
            vals[ok.to_numpy()] = ice(df.loc[ok, "white_hi_inc_hh"], df.loc[ok, "poc_lo_inc_hh"],
                                      df.loc[ok, "total_hh"])
        df["ICEraceinc"] = vals
    if {"rep_votes", "dem_votes", "total_votes"} <= set(df.columns):
        ok = df[["rep_votes", "dem_votes", "total_votes"]].notna().all(axis=1)
        vals = np.full(len(df), np.nan)
        if ok.any():
            vals[ok.to_numpy()] = political_lean(df.loc[ok, "rep_votes"], df.loc[ok, "dem_votes"],
                                                 df.loc[ok, "total_votes"])
        df["political_lean"] = vals
    if "area_sqmi" in df.columns:
        area = df["area_sqmi"].to_numpy()
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(area > 0, np.log10(df["popsize"].to_numpy() / area), np.nan)
        df["log10_density"] = dens
    df["offset"] = person_years_offset(df["popsize"].to_numpy())
    df["crude_rate"] = crude_rate(df["deaths"], df["popsize"])
    df["time"] = df["month"].astype(float)
    df["date"] = df["month"].astype(float)
    return Panel(df, report)


def _parse_int(text):
    v = float(text)
    if not np.isfinite(v) or v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def load_panel(path, *, roster=None, max_bad_fraction=0.01) -> Panel:
    """Read and validate a panel CSV.

    Parameters
    ----------
    path : str or path-like
        CSV with a header; see ``CANONICAL_COLUMNS``. ``fips`` becomes
        ``unit_id`` and ``month`` (``YYYY-MM``) becomes a month index.
        Extra columns are kept as numeric covariates.
    roster : iterable of str, optional
        Keep only these unit ids (e.g. contiguous-US counties).
    max_bad_fraction : float
        Rows with unparsable fields are dropped and reported; if more than
        this fraction of rows is bad the load fails.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in MANDATORY_COLUMNS if c not in raw.columns]
    if missing:
        raise PanelError(f"missing mandatory column(s): {', '.join(missing)}")
    report = LoadReport(n_read=len(raw))
    covariates = [c for c in raw.columns if c not in MANDATORY_COLUMNS]
    records = []
    bad = 0
    for i, row in enumerate(raw.itertuples(index=False, name=None)):
        rec = dict(zip(raw.columns, row))
        line = i + 2
        try:
            unit = rec["fips"].strip()
            if not unit:
                raise ValueError("empty fips")
            out = {"unit_id": unit, "month": month_index(rec["month"]),
                   "deaths": _parse_int(rec["deaths"]), "popsize": _parse_int(rec["popsize"])}
            for c in covariates:
                text = rec[c].strip()
                out[c] = float(text) if text and text.upper() != "NA" else np.nan
        except ValueError as exc:
            bad += 1
            report.drop(line, f"unparsable ({exc})")
            continue
        if out["popsize"] <= 0:
            report.drop(line, "popsize <= 0")
            bad += 1
            continue
        if not 0 <= out["deaths"] <= out["popsize"]:
            report.drop(line, "deaths outside [0, popsize]")
            bad += 1
            continue
        if roster is not None and unit not in roster:
            report.drop(line, "not in roster")
            continue
        records.append(out)
    if report.n_read and bad > max_bad_fraction * report.n_read:
        detail = "; ".join(f"line {ln}: {why}" for ln, why in report.examples[:5])
        raise PanelError(f"{bad} of {report.n_read} rows unparsable or invalid: {detail}")
    report.n_kept = len(records)
    if report.n_dropped:
        logger.warning("panel %s: %s", path, report.summary())
    columns = ["unit_id", "month", "deaths", "popsize"] + covariates
    frame = pd.DataFrame.from_records(records, columns=columns)
    return build_panel(frame, report)


def panel_to_frame(panel: Panel) -> pd.DataFrame:
    """Raw columns in canonical CSV form (``fips``, ``YYYY-MM`` months)."""
    df = panel.frame[panel.raw_columns].copy()
    df["month"] = [month_label(m) for m in df["month"]]
    df = df.rename(columns={"unit_id": "fips"})
    order = [c for c in CANONICAL_COLUMNS if c in df.columns]
    order += [c for c in df.columns if c not in order]
    return df[order]


def write_panel(panel: Panel, path) -> None:
    from ._io import atomic_write_text

    atomic_write_text(path, panel_to_frame(panel).to_csv(index=False, lineterminator="\n"))
