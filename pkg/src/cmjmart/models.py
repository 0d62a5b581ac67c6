"""Parametric offspring point processes and their Laplace calculus.

A model is a p x p grid of point-process specifications: entry (i, j)
governs the birth times of type-j children of a type-i parent.  The
catalog is closed so that every entry has

* an exact sampler driven by a counter-based stream,
* an analytic Laplace transform of its intensity measure together with
  analytic derivatives of every order, and
* closed-form truncation integrals for tail certification.

Supported kinds: a homogeneous Poisson process, a single exponentially
delayed Bernoulli birth, a deterministic atom, and finite superpositions
of these.  ``None`` denotes the empty process.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import gammaincc

from . import rng
from .errors import DomainError, UsageError
from .kernels import spectral_radius

_EPS_MARGIN = 1e-12
_MAX_NESTING = 4


@dataclass(frozen=True)
class Poisson:
    """Homogeneous Poisson process on [0, inf) with the given rate."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise UsageError(f"poisson rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class BernoulliExp:
    """With probability ``prob`` a single point at an Exp(rate) time."""

    prob: float
    rate: float

    def __post_init__(self):
        if not (0.0 <= self.prob <= 1.0):
            raise UsageError(f"bernoulli probability must be in [0,1], got {self.prob}")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise UsageError(f"exponential rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class FixedAtom:
    """Exactly ``count`` points at the deterministic time ``time``."""

    time: float
    count: int

    def __post_init__(self):
        if not (self.time >= 0 and math.isfinite(self.time)):
            raise UsageError(f"atom time must be nonnegative, got {self.time}")
        if not (isinstance(self.count, int) and self.count >= 1):
            raise UsageError(f"atom count must be a positive integer, got {self.count}")


@dataclass(frozen=True)
class Superposition:
    """Independent union of component processes."""

    components: tuple

    def __post_init__(self):
        if len(self.components) == 0:
            raise UsageError("superposition must have at least one component")
        if _nesting_depth(self) > _MAX_NESTING:
            raise UsageError(f"superposition nested deeper than {_MAX_NESTING}")


PointProcess = Union[Poisson, BernoulliExp, FixedAtom, Superposition]


def _nesting_depth(spec) -> int:
    if isinstance(spec, Superposition):
        return 1 + max(_nesting_depth(c) for c in spec.components)
    return 0


@dataclass(frozen=True)
class OffspringModel:
    """p x p grid of point-process specs plus the ancestor-type law.

    ``specs[i][j]`` (0-based) governs type-(j+1) children of a type-(i+1)
    parent; ``None`` entries are empty processes.  ``ancestor`` is either
    a fixed type in 1..p or a probability vector over types.
    """

    p: int
    specs: tuple
    ancestor: Union[int, tuple]

    def __post_init__(self):
        if self.p < 1:
            raise UsageError("model needs p >= 1 types")
        if len(self.specs) != self.p or any(len(row) != self.p for row in self.specs):
            raise UsageError("specs must be a p x p grid")
        if isinstance(self.ancestor, int):
            if not 1 <= self.ancestor <= self.p:
                raise UsageError(f"ancestor type {self.ancestor} outside 1..{self.p}")
        else:
            probs = np.asarray(self.ancestor, dtype=float)
            if probs.shape != (self.p,) or np.any(probs < 0):
                raise UsageError("ancestor distribution must be a nonnegative p-vector")
            if abs(float(probs.sum()) - 1.0) > 1e-12:
                raise UsageError("ancestor distribution must sum to 1")

    def entry(self, i: int, j: int) -> Optional[PointProcess]:
        """Spec for type-j children of a type-i parent (1-based)."""
        return self.specs[i - 1][j - 1]


def make_model(p: int, entries: dict, ancestor) -> OffspringModel:
    """Build a model from a {(i, j): spec} mapping with 1-based indices."""
    grid = [[None] * p for _ in range(p)]
    for (i, j), spec in entries.items():
        if not (1 <= i <= p and 1 <= j <= p):
            raise UsageError(f"entry ({i},{j}) outside 1..{p}")
        grid[i - 1][j - 1] = spec
    ancestor_value = ancestor if isinstance(ancestor, int) else tuple(ancestor)
    return OffspringModel(p=p, specs=tuple(tuple(row) for row in grid), ancestor=ancestor_value)


# ---------------------------------------------------------------------------
# Laplace transforms of the intensity measures
# ---------------------------------------------------------------------------

def abscissa(spec) -> float:
    """Infimum of Re(z) for which the entry's Laplace transform is finite."""
    if spec is None or isinstance(spec, FixedAtom):
        return -math.inf
    if isinstance(spec, Poisson):
        return 0.0
    if isinstance(spec, BernoulliExp):
        return -spec.rate
    if isinstance(spec, Superposition):
        return max(abscissa(c) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def model_abscissa(model: OffspringModel) -> float:
    return max(abscissa(spec) for row in model.specs for spec in row)


def laplace_entry(spec, z: complex, m: int) -> complex:
    """m-th derivative of the entry's Laplace transform at z (m=0: value)."""
    if spec is None:
        return 0.0
    if isinstance(spec, Poisson):
        # d^m/dz^m [rate / z] = rate * (-1)^m * m! / z^(m+1)
        return spec.rate * (-1.0) ** m * math.factorial(m) / z ** (m + 1)
    if isinstance(spec, BernoulliExp):
        return (
            spec.prob
            * spec.rate
            * (-1.0) ** m
            * math.factorial(m)
            / (spec.rate + z) ** (m + 1)
        )
    if isinstance(spec, FixedAtom):
        return spec.count * (-spec.time) ** m * np.exp(-z * spec.time)
    if isinstance(spec, Superposition):
        return sum(laplace_entry(c, z, m) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def _check_domain(model: OffspringModel, z: complex):
    re = z.real if isinstance(z, complex) else float(z)
    for i in range(1, model.p + 1):
        for j in range(1, model.p + 1):
            a = abscissa(model.entry(i, j))
            if not re > a + _EPS_MARGIN:
                raise DomainError(
                    f"Re(z)={re} not strictly inside the transform domain of "
                    f"entry ({i},{j}) (abscissa {a})"
                )


@dataclass
class LaplaceEval:
    """Transform matrix at a point together with its derivative matrices."""

    value: np.ndarray
    derivatives: list


def laplace_matrix(model: OffspringModel, z: complex, m_max: int = 0) -> LaplaceEval:
    """Matrix Laplace transform of the intensity measures and its first
    ``m_max`` derivative matrices, evaluated entrywise in closed form."""
    _check_domain(model, z)
    z = complex(z)
    derivs = []
    for m in range(m_max + 1):
        mat = np.empty((model.p, model.p), dtype=np.complex128)
        for i in range(model.p):
            for j in range(model.p):
                mat[i, j] = laplace_entry(model.specs[i][j], z, m)
        derivs.append(mat)
    return LaplaceEval(value=derivs[0], derivatives=derivs)


def laplace_values(model: OffspringModel, zs: np.ndarray) -> np.ndarray:
    """Transform matrices at many points: shape (len(zs), p, p)."""
    zs = np.asarray(zs, dtype=np.complex128)
    for z in (zs.ravel()[np.argmin(zs.real)],):
        _check_domain(model, complex(z))
    out = np.zeros(zs.shape + (model.p, model.p), dtype=np.complex128)
    for i in range(model.p):
        for j in range(model.p):
            spec = model.specs[i][j]
            if spec is not None:
                out[..., i, j] = _entry_values(spec, zs)
    return out


def laplace_derivative_values(model: OffspringModel, zs: np.ndarray) -> np.ndarray:
    """First-derivative matrices at many points: shape (len(zs), p, p)."""
    zs = np.asarray(zs, dtype=np.complex128)
    out = np.zeros(zs.shape + (model.p, model.p), dtype=np.complex128)
    for i in range(model.p):
        for j in range(model.p):
            spec = model.specs[i][j]
            if spec is not None:
                out[..., i, j] = _entry_deriv_values(spec, zs)
    return out


def _entry_values(spec, zs):
    if isinstance(spec, Poisson):
        return spec.rate / zs
    if isinstance(spec, BernoulliExp):
        return spec.prob * spec.rate / (spec.rate + zs)
    if isinstance(spec, FixedAtom):
        return spec.count * np.exp(-zs * spec.time)
    if isinstance(spec, Superposition):
        return sum(_entry_values(c, zs) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def _entry_deriv_values(spec, zs):
    if isinstance(spec, Poisson):
        return -spec.rate / zs ** 2
    if isinstance(spec, BernoulliExp):
        return -spec.prob * spec.rate / (spec.rate + zs) ** 2
    if isinstance(spec, FixedAtom):
        return -spec.time * spec.count * np.exp(-zs * spec.time)
    if isinstance(spec, Superposition):
        return sum(_entry_deriv_values(c, zs) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def atom_at_zero(model: OffspringModel) -> np.ndarray:
    """The p x p matrix of expected instantaneous offspring counts."""
    out = np.zeros((model.p, model.p))
    for i in range(model.p):
        for j in range(model.p):
            out[i, j] = _atom_mass(model.specs[i][j])
    return out


def _atom_mass(spec) -> float:
    if spec is None or isinstance(spec, (Poisson, BernoulliExp)):
        return 0.0
    if isinstance(spec, FixedAtom):
        return float(spec.count) if spec.time == 0.0 else 0.0
    if isinstance(spec, Superposition):
        return sum(_atom_mass(c) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def mean_count(spec, horizon: float) -> float:
    """Expected number of points in [0, horizon]."""
    if spec is None:
        return 0.0
    if isinstance(spec, Poisson):
        return spec.rate * horizon
    if isinstance(spec, BernoulliExp):
        return spec.prob * (1.0 - math.exp(-spec.rate * horizon))
    if isinstance(spec, FixedAtom):
        return float(spec.count) if spec.time <= horizon else 0.0
    if isinstance(spec, Superposition):
        return sum(mean_count(c, horizon) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def mean_count_batch(spec, windows: np.ndarray) -> np.ndarray:
    """Expected number of points in [0, w] for each window w."""
    if spec is None:
        return np.zeros_like(windows)
    if isinstance(spec, Poisson):
        return spec.rate * windows
    if isinstance(spec, BernoulliExp):
        return spec.prob * (1.0 - np.exp(-spec.rate * windows))
    if isinstance(spec, FixedAtom):
        return np.where(spec.time <= windows, float(spec.count), 0.0)
    if isinstance(spec, Superposition):
        return sum(mean_count_batch(c, windows) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


# ---------------------------------------------------------------------------
# Tail integrals for truncation certificates
# ---------------------------------------------------------------------------

def _upper_gamma_ratio(k: int, x: np.ndarray) -> np.ndarray:
    """Gamma(k, x) / (k-1)! for integer k >= 1; small orders avoid the
    special-function call (they dominate the tail-certification loops)."""
    if k == 1:
        return np.exp(-x)
    if k == 2:
        return np.exp(-x) * (1.0 + x)
    if k == 3:
        return np.exp(-x) * (1.0 + x + 0.5 * x * x)
    return gammaincc(k, x)


def tail_integral(spec, theta: float, k: int, h) -> np.ndarray:
    """Closed form of int_h^inf (1 + s^(k-1)) e^(-theta*s) mu(ds).

    ``h`` may be a scalar or an array of truncation offsets; ``theta``
    must be positive.
    """
    h = np.asarray(h, dtype=float)
    if theta <= 0:
        raise UsageError("tail integral requires theta = Re(lambda) > 0")
    if spec is None:
        return np.zeros_like(h)
    if isinstance(spec, Poisson):
        # rate * [ e^(-theta h)/theta + Gamma(k, theta h)/theta^k ]
        base = np.exp(-theta * h) / theta
        poly = _upper_gamma_ratio(k, theta * h) * math.factorial(k - 1) / theta ** k
        return spec.rate * (base + poly)
    if isinstance(spec, BernoulliExp):
        c = theta + spec.rate
        base = np.exp(-c * h) / c
        poly = _upper_gamma_ratio(k, c * h) * math.factorial(k - 1) / c ** k
        return spec.prob * spec.rate * (base + poly)
    if isinstance(spec, FixedAtom):
        weight = spec.count * (1.0 + spec.time ** (k - 1)) * math.exp(-theta * spec.time)
        return np.where(spec.time > h, weight, 0.0)
    if isinstance(spec, Superposition):
        return sum(tail_integral(c, theta, k, h) for c in spec.components)
    raise UsageError(f"unknown point-process kind {spec!r}")


def row_tail_integral(model: OffspringModel, i: int, theta: float, k: int, h) -> np.ndarray:
    """Tail integral summed over the offspring row of a type-i parent."""
    h = np.asarray(h, dtype=float)
    total = np.zeros_like(h)
    for j in range(1, model.p + 1):
        total = total + tail_integral(model.entry(i, j), theta, k, h)
    return total


# ---------------------------------------------------------------------------
# Exact samplers
# ---------------------------------------------------------------------------

_POISSON_BLOCK_PAD = 16.0


def sample_offspring(spec, horizon: float, stream: rng.Stream) -> np.ndarray:
    """Exact sample of the point process restricted to [0, horizon].

    Returns the sorted point times.  The draws are a pure function of
    ``(stream.key, horizon)``; enlarging the horizon re-reads the same
    stream prefix and appends later points.
    """
    if horizon < 0:
        raise UsageError("sampling horizon must be nonnegative")
    if spec is None:
        return np.empty(0)
    if isinstance(spec, Poisson):
        points = []
        total = 0.0
        while True:
            block = max(8, int(spec.rate * (horizon - total) + _POISSON_BLOCK_PAD))
            gaps = stream.exponential(spec.rate, block)
            times = total + np.cumsum(gaps)
            inside = times[times <= horizon]
            points.append(inside)
            if inside.size < times.size:
                break
            total = float(times[-1])
        return np.concatenate(points)
    if isinstance(spec, BernoulliExp):
        u = stream.uniform(2)
        if u[0] < spec.prob:
            t = -math.log(u[1]) / spec.rate
            if t <= horizon:
                return np.array([t])
        return np.empty(0)
    if isinstance(spec, FixedAtom):
        if spec.time <= horizon:
            return np.full(spec.count, spec.time)
        return np.empty(0)
    if isinstance(spec, Superposition):
        parts = [
            sample_offspring(c, horizon, rng.Stream(rng.component_key(stream.key, idx)))
            for idx, c in enumerate(spec.components)
        ]
        merged = np.concatenate(parts) if parts else np.empty(0)
        return np.sort(merged, kind="stable")
    raise UsageError(f"unknown point-process kind {spec!r}")


def _flatten(spec, key_fn):
    """Leaf specs of a (possibly nested) spec with their key derivations."""
    if isinstance(spec, Superposition):
        out = []
        for idx, comp in enumerate(spec.components):
            out.extend(_flatten(comp, lambda keys, i=idx, f=key_fn: rng.component_key_array(f(keys), i)))
        return out
    return [(spec, key_fn)]


def sample_offspring_batch(spec, keys: np.ndarray, windows: np.ndarray,
                           row_slab: int = 65536):
    """Batched version of :func:`sample_offspring`.

    ``keys[r]`` is the entry-stream key for parent row ``r`` and
    ``windows[r]`` its sampling window.  Returns ``(rows, times)`` in a
    deterministic emission order: leaves in declaration order, and within
    a leaf and row, points in time order.  Row ``r`` reproduces exactly
    ``sample_offspring(spec, windows[r], Stream(keys[r]))``.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    windows = np.asarray(windows, dtype=float)
    if spec is None or keys.size == 0:
        return np.empty(0, np.int64), np.empty(0)

    leaves = _flatten(spec, lambda k: k)
    if len(leaves) == 1:
        leaf, key_fn = leaves[0]
        return _sample_leaf_batch(leaf, key_fn(keys), windows, row_slab)
    rows_out, times_out = [], []
    for leaf, key_fn in leaves:
        r, t = _sample_leaf_batch(leaf, key_fn(keys), windows, row_slab)
        rows_out.append(r)
        times_out.append(t)
    return np.concatenate(rows_out), np.concatenate(times_out)


def _sample_leaf_batch(leaf, keys, windows, row_slab):
    n = len(keys)
    if isinstance(leaf, FixedAtom):
        hit = np.nonzero(leaf.time <= windows)[0]
        rows = np.repeat(hit, leaf.count)
        return rows, np.full(rows.size, leaf.time)
    if isinstance(leaf, BernoulliExp):
        u = rng.uniform_block(keys, 0, 2)
        t = -np.log(u[:, 1]) / leaf.rate
        hit = np.nonzero((u[:, 0] < leaf.prob) & (t <= windows))[0]
        return hit, t[hit]
    if isinstance(leaf, Poisson):
        if n <= row_slab:
            return _poisson_rows(leaf.rate, keys, windows)
        rows_acc, times_acc = [], []
        for lo in range(0, n, row_slab):
            hi = min(n, lo + row_slab)
            r, t = _poisson_rows(leaf.rate, keys[lo:hi], windows[lo:hi])
            rows_acc.append(r + lo)
            times_acc.append(t)
        return np.concatenate(rows_acc), np.concatenate(times_acc)
    raise UsageError(f"unknown point-process kind {leaf!r}")


def _poisson_rows(rate, keys, windows):
    n = len(keys)
    active = np.arange(n)
    totals = np.zeros(n)
    counter = 0
    rows_acc, times_acc = [], []
    while active.size:
        m = active.size
        span = float(np.max(windows[active] - totals[active]))
        mean_pts = rate * span
        width = max(4, int(mean_pts + 2.5 * math.sqrt(mean_pts + 1.0) + 4.0))
        times = rng.uniform_block_scratch(keys[active], counter, width)
        np.log(times, out=times)
        times *= -1.0 / rate
        np.cumsum(times, axis=1, out=times)
        times += totals[active, None]
        # cumulative sums ascend, so the kept points are a row prefix and a
        # flat boolean index preserves (row, time) order
        keep = rng.scratch(m * width, np.bool_).reshape(m, width)
        np.less_equal(times, windows[active, None], out=keep)
        counts = keep.sum(axis=1)
        rows_acc.append(np.repeat(active, counts))
        times_acc.append(times[keep])
        unfinished = keep[:, -1].copy()
        totals[active] = times[:, -1]
        active = active[unfinished]
        counter += width
    if len(rows_acc) == 1:
        return rows_acc[0], times_acc[0]
    return np.concatenate(rows_acc), np.concatenate(times_acc)


def empirical_laplace_check(model: OffspringModel, z_values, n_samples: int,
                            seed: int, sigmas: float = 4.0) -> dict:
    """Monte Carlo agreement of the sampled point processes with their
    analytic transforms: for every entry and every z, the mean of
    ``sum_points e^(-z s)`` over ``n_samples`` draws must match the
    analytic value within ``sigmas`` standard errors (real and imaginary
    parts separately)."""
    records = []
    worst = 0.0
    for i in range(1, model.p + 1):
        for j in range(1, model.p + 1):
            spec = model.entry(i, j)
            if spec is None:
                continue
            re_min = min(complex(z).real for z in z_values)
            horizon = 1.0
            while float(tail_integral(spec, re_min, 1, horizon)) > 1e-10 and horizon < 2000:
                horizon *= 2.0
            keys = rng.combine_array(
                np.full(n_samples, rng.combine(seed, i * (model.p + 1) + j), np.uint64),
                np.arange(n_samples, dtype=np.uint64))
            rows, pts = sample_offspring_batch(spec, keys, np.full(n_samples, horizon))
            for z in z_values:
                z = complex(z)
                w = np.exp(-z * pts)
                stat_re = np.bincount(rows, weights=w.real, minlength=n_samples)
                stat_im = np.bincount(rows, weights=w.imag, minlength=n_samples)
                exact = laplace_entry(spec, z, 0)
                rec = {"entry": (i, j), "z": z, "exact": exact}
                zmax = 0.0
                for part, stat, target in (("re", stat_re, complex(exact).real),
                                           ("im", stat_im, complex(exact).imag)):
                    mean = float(stat.mean())
                    se = float(stat.std(ddof=1) / math.sqrt(n_samples))
                    zscore = abs(mean - target) / max(se, 1e-15)
                    rec[f"mean_{part}"] = mean
                    rec[f"se_{part}"] = se
                    zmax = max(zmax, zscore)
                rec["z_score"] = zmax
                rec["pass"] = zmax <= sigmas
                worst = max(worst, zmax)
                records.append(rec)
    return {"records": records, "worst_z": worst,
            "pass": all(r["pass"] for r in records)}


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    a1_pass: bool
    a1_rho: float
    a2_pass: bool
    alpha: Optional[float]
    message: str = ""

    @property
    def all_pass(self) -> bool:
        return self.a1_pass and self.a2_pass


def validate_assumptions(model: OffspringModel) -> ValidationReport:
    """Check subcritical instantaneous offspring and the existence of a
    Malthusian parameter; failures are reported, not raised."""
    rho0, _ = spectral_radius(atom_at_zero(model))
    a1 = rho0 < 1.0
    alpha = None
    a2 = False
    message = ""
    if a1:
        from .spectral import find_malthusian

        try:
            perron = find_malthusian(model)
            alpha = perron.alpha
            a2 = True
        except Exception as exc:  # failure is a report entry
            message = str(exc)
    else:
        message = f"instantaneous offspring matrix has spectral radius {rho0} >= 1"
    return ValidationReport(a1_pass=a1, a1_rho=rho0, a2_pass=a2, alpha=alpha, message=message)


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

def spec_to_json(spec) -> dict:
    if isinstance(spec, Poisson):
        return {"kind": "poisson", "rate": spec.rate}
    if isinstance(spec, BernoulliExp):
        return {"kind": "bernoulli_exp", "prob": spec.prob, "rate": spec.rate}
    if isinstance(spec, FixedAtom):
        return {"kind": "fixed_atom", "time": spec.time, "count": spec.count}
    if isinstance(spec, Superposition):
        return {"kind": "superposition", "components": [spec_to_json(c) for c in spec.components]}
    raise UsageError(f"unknown point-process kind {spec!r}")


def spec_from_json(obj) -> PointProcess:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise UsageError(f"process spec must be an object with a 'kind': {obj!r}")
    kind = obj["kind"]
    try:
        if kind == "poisson":
            return Poisson(rate=float(obj["rate"]))
        if kind == "bernoulli_exp":
            return BernoulliExp(prob=float(obj["prob"]), rate=float(obj["rate"]))
        if kind == "fixed_atom":
            return FixedAtom(time=float(obj["time"]), count=int(obj["count"]))
        if kind == "superposition":
            return Superposition(components=tuple(spec_from_json(c) for c in obj["components"]))
    except KeyError as exc:
        raise UsageError(f"process spec {kind!r} missing field {exc}") from exc
    raise UsageError(f"unknown process kind {kind!r}")


def model_to_json(model: OffspringModel) -> dict:
    entries = []
    for i in range(1, model.p + 1):
        for j in range(1, model.p + 1):
            spec = model.entry(i, j)
            if spec is not None:
                entries.append({"from": i, "to": j, "process": spec_to_json(spec)})
    ancestor = model.ancestor if isinstance(model.ancestor, int) else list(model.ancestor)
    return {"p": model.p, "entries": entries, "ancestor": ancestor}


def model_from_json(obj) -> OffspringModel:
    if not isinstance(obj, dict):
        raise UsageError("model document must be a JSON object")
    try:
        p = int(obj["p"])
        raw_entries = obj["entries"]
        ancestor = obj["ancestor"]
    except KeyError as exc:
        raise UsageError(f"model document missing field {exc}") from exc
    entries = {}
    for pos, ent in enumerate(raw_entries):
        try:
            i, j = int(ent["from"]), int(ent["to"])
            spec = spec_from_json(ent["process"])
        except KeyError as exc:
            raise UsageError(f"entry #{pos} missing field {exc}") from exc
        if (i, j) in entries:
            raise UsageError(f"entry #{pos}: duplicate position ({i},{j})")
        entries[(i, j)] = spec
    if not isinstance(ancestor, int):
        ancestor = tuple(float(x) for x in ancestor)
    return make_model(p, entries, ancestor)


def load_model(path) -> OffspringModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    return model_from_json(doc)
