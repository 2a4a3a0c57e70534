"""Synthetic panels from known smooth surfaces, and the B-spline demo tables.

Surfaces are functions on the link scale (log deaths per 100,000
person-years) of a unit covariate ``x`` in [0, 1], unit position ``(u, v)``
in the unit square and month fraction ``s = month / (n_months - 1)``.

==========================  ======================================  =================
name                        formula                                 params
==========================  ======================================  =================
constant                    a                                       a
linear                      a + b x                                 a, b
quadratic                   a + b x + c x^2                         a, b, c
sine                        a + amp sin(2 pi cycles x)              a, amp, cycles
gaussian-bump-2d            a + amp exp(-|(u,v) - (cu,cv)|^2/2w^2)  a, amp, cu, cv, w
separable-space-time        a + amp_s exp(-|(u,v) - c|^2/2w^2)      a, amp_s, w,
                            + amp_t sin(2 pi cycles s)              amp_t, cycles
covariate-time              a + b x + c sin(2 pi s)                 a, b, c, amp_xt
                            + amp_xt (2x - 1)(2s - 1)
==========================  ======================================  =================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
import pandas as pd

from .basis import bspline_design
from .data import Panel, build_panel
from .family import sample_nb


def _bump(u, v, cu, cv, w):
    return np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2.0 * w * w))


SURFACES = {
    "constant": (1, lambda p, x, u, v, s: np.full_like(x, p[0])),
    "linear": (2, lambda p, x, u, v, s: p[0] + p[1] * x),
    "quadratic": (3, lambda p, x, u, v, s: p[0] + p[1] * x + p[2] * x * x),
    "sine": (3, lambda p, x, u, v, s: p[0] + p[1] * np.sin(2 * np.pi * p[2] * x)),
    "gaussian-bump-2d": (5, lambda p, x, u, v, s: p[0] + p[1] * _bump(u, v, p[2], p[3], p[4])),
    "separable-space-time": (
        5, lambda p, x, u, v, s: (p[0] + p[1] * _bump(u, v, 0.5, 0.5, p[2])
                                  + p[3] * np.sin(2 * np.pi * p[4] * s))),
    "covariate-time": (
        4, lambda p, x, u, v, s: (p[0] + p[1] * x + p[2] * np.sin(2 * np.pi * s)
                                  + p[3] * (2 * x - 1) * (2 * s - 1))),
}

DEFAULT_PARAMS = {
    "constant": (math.log(100.0),),
    "linear": (math.log(100.0) - 0.5, 1.0),
    "quadratic": (math.log(100.0) + 0.5, -2.0, 2.0),
    "sine": (math.log(100.0), 0.5, 1.0),
    "gaussian-bump-2d": (math.log(100.0) - 0.3, 1.0, 0.4, 0.6, 0.2),
    "separable-space-time": (math.log(100.0) - 0.3, 0.8, 0.25, 0.4, 1.0),
    "covariate-time": (math.log(100.0), 0.5, 0.3, 0.0),
}

LINK_OVERFLOW = 30.0


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_units: int = 400
    n_months: int = 24
    popsize_meanlog: float = 11.0
    popsize_sdlog: float = 1.0
    surface: str = "constant"
    surface_params: tuple = ()
    phi: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise SimConfigError(f"unknown surface {self.surface!r}; "
                                 f"choose from {', '.join(SURFACES)}")
        params = tuple(float(v) for v in self.surface_params) or DEFAULT_PARAMS[self.surface]
        object.__setattr__(self, "surface_params", params)
        arity = SURFACES[self.surface][0]
        if len(params) != arity:
            raise SimConfigError(f"surface {self.surface!r} takes {arity} params, "
                                 f"got {len(params)}")
        if self.n_units < 1 or self.n_months < 1:
            raise SimConfigError("n_units and n_months must be positive")
        if not self.phi > 0 or self.popsize_sdlog < 0:
            raise SimConfigError("phi must be positive and popsize_sdlog non-negative")

    @classmethod
    def from_text(cls, text: str) -> "SimConfig":
        """Parse flat ``key=value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise SimConfigError(f"line {lineno}: bad entry {line!r}")
            try:
                if key == "surface":
                    kwargs[key] = value
                elif key == "surface_params":
                    kwargs[key] = tuple(float(v) for v in value.split(",") if v.strip())
                elif key in ("n_units", "n_months", "seed"):
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError:
                raise SimConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "surface_params":
                v = ",".join(repr(float(p)) for p in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def replicate(self, index: int) -> "SimConfig":
        """Config for replicate ``index``; seeds split as ``seed + index``."""
        from dataclasses import replace
        return replace(self, seed=self.seed + index)


def unit_layout(n_units, rng):
    """Jittered lattice positions in the unit square, row-major."""
    side = math.ceil(math.sqrt(n_units))
    idx = np.arange(n_units)
    col, row = idx % side, idx // side
    jitter = rng.uniform(-0.3, 0.3, size=(n_units, 2))
    u = (col + 0.5 + jitter[:, 0]) / side
    v = (row + 0.5 + jitter[:, 1]) / side
    return u, v


def to_latlon(u, v):
    return 25.0 + 24.0 * v, -124.0 + 57.0 * u


def from_latlon(lat, lon):
    return (np.asarray(lon) + 124.0) / 57.0, (np.asarray(lat) - 25.0) / 24.0


@dataclass
class Simulation:
    panel: Panel
    truth: pd.DataFrame
    config: SimConfig = field(repr=False, default=None)


def surface_values(config: SimConfig, x, u, v, s):
    return SURFACES[config.surface][1](config.surface_params, np.asarray(x, dtype=float),
                                       np.asarray(u, dtype=float), np.asarray(v, dtype=float),
                                       np.asarray(s, dtype=float))


def simulate_panel(config: SimConfig) -> Simulation:
    """Draw a unit-month panel with NB deaths around a catalog surface.

    Deaths have mean ``exp(offset + f)`` with the person-years offset, so
    ``f`` is the log rate per 100,000 person-years. Draw order is fixed
    (layout, covariate, population, counts) so a seed pins the output.
    """
    rng = np.random.default_rng(config.seed)
    n, T = config.n_units, config.n_months
    u, v = unit_layout(n, rng)
    x = rng.uniform(0.0, 1.0, size=n)
    pop = np.maximum(1, np.round(rng.lognormal(config.popsize_meanlog, config.popsize_sdlog,
                                               size=n))).astype(np.int64)
    lat, lon = to_latlon(u, v)
    unit = np.repeat(np.arange(n), T)
    month = np.tile(np.arange(T), n)
    s = month / max(T - 1, 1)
    f = surface_values(config, x[unit], u[unit], v[unit], s)
    if np.max(f) > LINK_OVERFLOW:
        raise SimConfigError(f"surface exceeds {LINK_OVERFLOW} on the link scale")
    popsize = pop[unit]
    mu = np.exp(np.log(popsize / 1e5 / 12.0) + f)
    deaths = np.minimum(sample_nb(mu, config.phi, rng), popsize)
    ids = np.array([f"{i + 1:05d}" for i in range(n)])
    frame = pd.DataFrame({
        "unit_id": ids[unit], "month": month, "deaths": deaths, "popsize": popsize,
        "latitude": lat[unit], "longitude": lon[unit], "x": x[unit],
    })
    truth = pd.DataFrame({"unit": ids[unit], "month": month, "true_link": f})
    return Simulation(build_panel(frame), truth, config)


def truth_rmse(fit, sim: Simulation) -> float:
    """Link-scale RMSE of a fit's prediction against the simulation truth."""
    from .fitter import predict_frame

    frame = sim.panel.frame
    pred = predict_frame(fit, frame)
    merged = sim.truth.merge(
        pd.DataFrame({"unit": frame["unit_id"], "month": frame["month"],
                      "eta": pred["linear_predictor"]}), on=["unit", "month"])
    return float(np.sqrt(np.mean((merged["eta"] - merged["true_link"]) ** 2)))


# ---------------------------------------------------------------------------
# B-spline regression demo

DEMO_N = 200
DEMO_GRID = 101
DEMO_K = 10
DEMO_PHI = 20.0


def demo_truth(x):
    return math.log(20.0) + 0.8 * np.sin(2 * np.pi * np.asarray(x)) - 0.6 * np.asarray(x)


@dataclass
class DemoTables:
    data: pd.DataFrame
    basis: pd.DataFrame
    fit: pd.DataFrame
    result: object = field(repr=False, default=None)


def spline_demo(seed: int = 20220901) -> DemoTables:
    """A 1-D count dataset, its B-spline basis and the weighted-basis fit.

    ``fit`` columns: ``intercept``, ``w1..wk`` (each raw B-spline times its
    coefficient, mapped back through the centering constraint) and
    ``fitted`` from the model's own prediction path, so
    ``intercept + sum(w) == fitted`` up to rounding.
    """
    from .fitter import predict_frame, select_smoothing
    from .model_dsl import OffsetRule, parse_formula

    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 1.0, size=DEMO_N))
    f = demo_truth(x)
    y = sample_nb(np.exp(f), DEMO_PHI, rng)
    data = pd.DataFrame({"x": x, "y": y, "true_link": f})

    spec = parse_formula(f"y ~ s(x,k={DEMO_K})", offset_rule=OffsetRule("none"))
    result = select_smoothing(spec, data)
    term = result.terms[0]
    marg = term.marginals[0]
    grid = np.linspace(*marg.domain, DEMO_GRID)
    B = bspline_design(grid, marg)
    cols = [f"b{j + 1}" for j in range(B.shape[1])]
    basis = pd.DataFrame(B, columns=cols)
    basis.insert(0, "x", grid)

    gamma = term.constraint @ result.coefficients[term.col_offset:term.col_offset + term.n_cols]
    weighted = B * gamma[None, :]
    fit = pd.DataFrame(weighted, columns=[f"w{j + 1}" for j in range(B.shape[1])])
    fit.insert(0, "intercept", result.intercept)
    fit.insert(0, "x", grid)
    fit["fitted"] = predict_frame(result, pd.DataFrame({"x": grid}))["linear_predictor"]
    fit["true_link"] = demo_truth(grid)
    return DemoTables(data, basis, fit, result)
