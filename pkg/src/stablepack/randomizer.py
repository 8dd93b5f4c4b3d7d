"""Domain randomization of per-item physical parameters.

Parameters are drawn either from a truncated Gaussian KDE fitted to measured
samples or, without measurements, from a bounded fallback that reproduces the
published minimum, average and maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.special import ndtr

from .stability import PhysicsParams

FRICTION_KEYS = ("dynamic_friction", "static_friction")
OFFSET_KEYS = ("x_mass_offset", "y_mass_offset", "z_mass_offset")
PARAM_KEYS = FRICTION_KEYS + OFFSET_KEYS + ("drop_height", "restitution")


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class ParamRange:
    name: str
    min: float
    mean: float | None
    max: float

    def __post_init__(self):
        if self.min > self.max or (self.mean is not None and not self.min <= self.mean <= self.max):
            raise ValueError(f"bad range for {self.name}: {self}")

    def sample(self, rng: np.random.Generator, size=None):
        """Bounded draw with the requested mean.

        Triangular with mode chosen so the mean matches; when that mode would
        leave [min, max] a Beta(a, b) with a + b = 4 and the same mean is used.
        No mean means uniform.
        """
        lo, hi = self.min, self.max
        if hi == lo:
            return np.full(size, lo) if size is not None else lo
        if self.mean is None:
            return rng.uniform(lo, hi, size)
        mode = 3.0 * self.mean - lo - hi
        if lo <= mode <= hi:
            return rng.triangular(lo, mode, hi, size)
        m = (self.mean - lo) / (hi - lo)
        return lo + (hi - lo) * rng.beta(4.0 * m, 4.0 * (1.0 - m), size)


_TABLE = (
    ParamRange("dynamic_friction", 0.12, 0.27, 0.45),
    ParamRange("static_friction", 0.16, 0.34, 0.53),
    ParamRange("x_mass_offset", 0.0, 7.23, 25.35),  # percent of side length
    ParamRange("y_mass_offset", 0.0, 5.17, 18.68),
    ParamRange("z_mass_offset", 0.0, 5.12, 21.77),
    ParamRange("drop_height", 0.0, None, 5.0),  # cm
    ParamRange("restitution", 0.0, None, 0.3),  # unvalidated default
)


def _norm_key(name: str) -> str:
    key = name.strip().lower().replace("-", " ").replace("_", " ")
    key = key.replace(" coefficient", "").replace(" rate", "").replace(" (%)", "").replace("-axis", "")
    key = "_".join(key.split())
    aliases = {"x_axis_mass_offset": "x_mass_offset", "y_axis_mass_offset": "y_mass_offset",
               "z_axis_mass_offset": "z_mass_offset"}
    return aliases.get(key, key)


def default_ranges() -> dict[str, ParamRange]:
    return {r.name: r for r in _TABLE}


def lookup(name: str) -> ParamRange | None:
    return default_ranges().get(_norm_key(name))


@dataclass
class FittedDistribution:
    """Gaussian KDE truncated to [lo, hi] with a tabulated CDF."""

    support: np.ndarray
    bandwidth: float
    lo: float
    hi: float
    grid: np.ndarray = field(repr=False)
    cdf_grid: np.ndarray = field(repr=False)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.hi == self.lo:
            return (x >= self.lo).astype(float)
        return _kde_cdf(x, self.support, self.bandwidth, self.lo, self.hi)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.support) / self.bandwidth
        dens = np.exp(-0.5 * z * z).sum(-1) / (math.sqrt(2 * math.pi) * self.bandwidth * len(self.support))
        mass = _kde_mass(self.support, self.bandwidth, self.lo, self.hi)
        return np.where((x >= self.lo) & (x <= self.hi), dens / mass, 0.0)

    def ppf(self, u):
        if self.hi == self.lo:
            return np.full(np.shape(u), self.lo)
        return np.interp(u, self.cdf_grid, self.grid)

    def sample(self, rng: np.random.Generator, size=None):
        out = self.ppf(rng.uniform(0.0, 1.0, size))
        return float(out) if size is None else out

    def mean(self) -> float:
        if self.hi == self.lo:
            return self.lo
        mid = 0.5 * (self.grid[1:] + self.grid[:-1])
        return float(np.sum(mid * np.diff(self.cdf_grid)))


def _kde_mass(support, h, lo, hi):
    return float(np.mean(ndtr((hi - support) / h) - ndtr((lo - support) / h)))


def _kde_cdf(x, support, h, lo, hi):
    raw = np.mean(ndtr((x[..., None] - support) / h) - ndtr((lo - support) / h), axis=-1)
    return np.clip(raw / _kde_mass(support, h, lo, hi), 0.0, 1.0) * (x >= lo)


def silverman_bandwidth(samples) -> float:
    s = np.asarray(samples, dtype=float)
    sigma = s.std(ddof=1)
    iqr = np.subtract(*np.percentile(s, [75, 25]))
    spread = min(sigma, iqr / 1.34) if iqr > 0 else sigma
    return 0.9 * spread * len(s) ** -0.2


def fit_kde(samples: Iterable[float], bandwidth: float | None = None,
            bounds: tuple[float, float] | None = None, grid_size: int = 2048) -> FittedDistribution:
    """Fit a KDE truncated to the sample range (intersected with `bounds`)."""
    s = np.asarray(list(samples), dtype=float)
    if len(s) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(s)}")
    lo, hi = float(s.min()), float(s.max())
    if bounds is not None:
        lo, hi = max(lo, bounds[0]), min(hi, bounds[1])
    h = bandwidth if bandwidth is not None else silverman_bandwidth(s)
    if h is None or not h > 0:
        h = 1e-3 * (abs(lo) + 1.0)
    if hi <= lo:
        grid = np.array([lo, lo])
        return FittedDistribution(s, h, lo, lo, grid, np.array([0.0, 1.0]))
    grid = np.linspace(lo, hi, grid_size)
    cdf = _kde_cdf(grid, s, h, lo, hi)
    cdf[0], cdf[-1] = 0.0, 1.0
    return FittedDistribution(s, h, lo, hi, grid, np.maximum.accumulate(cdf))


def read_measurements(path) -> dict[str, list[float]]:
    """Parse `parameter_name,value` lines; '#' starts a comment."""
    out: dict[str, list[float]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            name, value = line.rsplit(",", 1)
            out.setdefault(_norm_key(name), []).append(float(value))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad measurement record {line!r}") from exc
    return out


def fit_measurements(measurements: Mapping[str, list[float]], bandwidth: float | None = None):
    """Fit a truncated KDE per measured parameter, clipped to the published range."""
    ranges = default_ranges()
    fitted = {}
    for key, values in measurements.items():
        r = ranges.get(key)
        fitted[key] = fit_kde(values, bandwidth, bounds=(r.min, r.max) if r else None)
    return fitted


def fixture_path() -> Path:
    return Path(__file__).parent / "fixtures" / "measurements_synthetic.csv"


def sample_params(dists: Mapping | None = None, seed=None, rng: np.random.Generator | None = None,
                  max_tries: int = 1000) -> PhysicsParams:
    """One draw of per-item physics.

    `dists` maps parameter keys to a FittedDistribution or ParamRange; keys
    missing from it fall back to the published ranges. Offsets are drawn as
    magnitudes in percent and given a random sign.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    table = default_ranges()
    if dists:
        table.update(dists)
    for _ in range(max_tries):
        mu_d = float(table["dynamic_friction"].sample(rng))
        mu_s = float(table["static_friction"].sample(rng))
        if mu_d <= mu_s:
            break
    else:
        mu_d = mu_s
    offset = []
    for key in OFFSET_KEYS:
        mag = float(table[key].sample(rng)) / 100.0
        offset.append(mag if rng.uniform() < 0.5 else -mag)
    return PhysicsParams(
        mu_static=mu_s,
        mu_dynamic=mu_d,
        mass_center_offset=tuple(offset),
        drop_height=float(table["drop_height"].sample(rng)),
        restitution=float(table["restitution"].sample(rng)),
    )


def nominal_params() -> PhysicsParams:
    """Randomization switched off: average friction, no offsets, no drop."""
    r = default_ranges()
    return PhysicsParams(mu_static=r["static_friction"].mean, mu_dynamic=r["dynamic_friction"].mean)
