"""Malthusian parameter, characteristic roots, and Laurent matrices.

The characteristic equation is ``det(I - L(z)) = 0`` where ``L`` is the
matrix Laplace transform of the offspring intensity measures.  This
module locates its solutions inside a rectangle by the argument
principle (the logarithmic derivative of the determinant is
``-trace(R(z) L'(z))`` with ``R`` the resolvent, by Jacobi's formula),
refines them with multiplicity-aware Newton steps, determines pole
orders from winding numbers on shrinking circles, and extracts the
Laurent coefficient matrices of the resolvent by trapezoid quadrature on
circles, which converges geometrically for analytic integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AssumptionError, ConvergenceError, UsageError
from .kernels import hs_norm, is_primitive, spectral_radius
from .models import (
    OffspringModel,
    atom_at_zero,
    laplace_derivative_values,
    laplace_matrix,
    laplace_values,
    model_abscissa,
)

_DET_TOL = 1e-10
_WINDING_TOL = 1e-3
_RHO_TOL = 1e-13


@dataclass
class PerronData:
    """Malthusian parameter with the Perron pair of L(alpha)."""

    alpha: float
    right: np.ndarray
    left: np.ndarray
    primitive: bool
    rho_residual: float


@dataclass
class CharacteristicRoot:
    lam: complex
    order: int
    det_residual: float


@dataclass
class LaurentData:
    """Laurent coefficient matrices of the resolvent at one root.

    ``coeffs[n-1]`` is the matrix attached to ``(z - lam)^(-n)``;
    ``stacked`` stacks them vertically into the (k*p) x p block matrix
    that solves the block fixed-point equation.
    """

    root: CharacteristicRoot
    coeffs: list
    stacked: np.ndarray
    identity_residual: float = field(default=math.nan)


# ---------------------------------------------------------------------------
# Malthusian parameter
# ---------------------------------------------------------------------------

def _rho(model: OffspringModel, theta: float) -> float:
    val, _ = spectral_radius(laplace_matrix(model, theta).value.real)
    return val


def find_malthusian(model: OffspringModel, scan_step: float = 0.01,
                    scan_span: float = 10.0, min_alpha: float = 1e-9) -> PerronData:
    """Largest theta > 0 with spectral radius of L(theta) equal to one.

    The spectral radius is non-increasing in theta, so a bracket is
    located by directed walking and then bisected.  After convergence a
    grid scan above the root asserts maximality.  Roots below
    ``min_alpha`` are rejected: at double precision they cannot be told
    apart from a critical model whose radius only reaches 1 in the limit
    theta -> 0.
    """
    rho0, _ = spectral_radius(atom_at_zero(model))
    if rho0 >= 1.0:
        raise AssumptionError(
            f"instantaneous offspring matrix has spectral radius {rho0} >= 1")
    floor = max(model_abscissa(model), 0.0)

    theta = max(1.0, floor * 2 + 1.0)
    if _rho(model, theta) >= 1.0:
        lo = theta
        hi = theta
        for _ in range(200):
            hi *= 2.0
            if _rho(model, hi) < 1.0:
                break
        else:
            raise ConvergenceError("no upper bracket for the Malthusian parameter")
    else:
        hi = theta
        lo = None
        gap = theta - floor
        for _ in range(100):
            gap *= 0.5
            cand = floor + gap
            if _rho(model, cand) >= 1.0:
                lo = cand
                hi = floor + 2 * gap
                break
        if lo is None:
            raise AssumptionError(
                "no Malthusian parameter: spectral radius of L(theta) stays "
                "below 1 for all theta > 0 (model not supercritical)")

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= _RHO_TOL * max(1.0, mid):
            break
        if _rho(model, mid) >= 1.0:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    if alpha <= max(min_alpha, 0.0):
        raise AssumptionError(
            f"located parameter {alpha} is not meaningfully positive; the "
            "model is critical or subcritical at working precision")

    # Maximality: the spectral radius must stay below 1 on a grid above alpha.
    for step in np.arange(scan_step, scan_span + scan_step / 2, scan_step):
        if _rho(model, alpha + step) >= 1.0:
            raise AssumptionError(
                f"spectral radius returns to 1 at theta = {alpha + step}; "
                "the located root is not maximal")

    lmat = laplace_matrix(model, alpha).value.real
    rho_res = abs(spectral_radius(lmat)[0] - 1.0)
    right = _eigvec_for_one(lmat)
    left = _eigvec_for_one(lmat.T)
    scale = float(left @ right)
    if abs(scale) > 1e-14:
        left = left / scale
    return PerronData(
        alpha=alpha,
        right=right,
        left=left,
        primitive=is_primitive(lmat),
        rho_residual=rho_res,
    )


def _eigvec_for_one(mat: np.ndarray) -> np.ndarray:
    """Nonnegative eigenvector of a nonnegative matrix for eigenvalue ~1."""
    eigs, vecs = np.linalg.eig(mat)
    idx = int(np.argmin(np.abs(eigs - 1.0)))
    v = vecs[:, idx]
    pivot = v[np.argmax(np.abs(v))]
    v = np.real(v * np.conj(pivot) / abs(pivot))
    v = np.clip(v, 0.0, None)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ConvergenceError("degenerate Perron eigenvector")
    return v / norm


# ---------------------------------------------------------------------------
# Winding numbers and root location
# ---------------------------------------------------------------------------

def _log_derivative(model: OffspringModel, zs: np.ndarray) -> np.ndarray:
    """d/dz log det(I - L(z)) evaluated at many points."""
    lvals = laplace_values(model, zs)
    dvals = laplace_derivative_values(model, zs)
    p = model.p
    eye = np.eye(p)
    resolvents = np.linalg.inv(eye[None, :, :] - lvals)
    return -np.einsum("nij,nji->n", resolvents, dvals)


def _det_values(model: OffspringModel, zs: np.ndarray) -> np.ndarray:
    lvals = laplace_values(model, zs)
    return np.linalg.det(np.eye(model.p)[None, :, :] - lvals)


_GL_CACHE: dict = {}


def _gauss_nodes(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _segment_integral(model, z0: complex, z1: complex, nodes: int) -> complex:
    x, w = _gauss_nodes(nodes)
    mid = 0.5 * (z0 + z1)
    half = 0.5 * (z1 - z0)
    zs = mid + half * x
    vals = _log_derivative(model, zs)
    return half * np.sum(w * vals)


def _rect_winding(model, re0, re1, im0, im1, start_nodes: int = 24,
                  max_nodes: int = 3072) -> int:
    corners = [re0 + 1j * im0, re1 + 1j * im0, re1 + 1j * im1, re0 + 1j * im1]
    nodes = start_nodes
    prev = None
    while nodes <= max_nodes:
        total = sum(
            _segment_integral(model, corners[k], corners[(k + 1) % 4], nodes)
            for k in range(4)
        )
        winding = total / (2j * math.pi)
        rounded = round(winding.real)
        ok = (abs(winding - rounded) <= _WINDING_TOL)
        if ok and prev == rounded:
            return int(rounded)
        prev = rounded if ok else None
        nodes *= 2
    raise ConvergenceError(
        f"winding integral over [{re0},{re1}]x[{im0},{im1}] did not settle "
        "on an integer (root near the boundary?)")


def _circle_winding(model, center: complex, radius: float,
                    start_nodes: int = 64, max_nodes: int = 4096) -> int:
    nodes = start_nodes
    prev = None
    while nodes <= max_nodes:
        phi = 2 * math.pi * np.arange(nodes) / nodes
        zs = center + radius * np.exp(1j * phi)
        vals = _log_derivative(model, zs) * (1j * radius * np.exp(1j * phi))
        winding = np.sum(vals) / (1j * nodes)
        rounded = round(winding.real)
        if abs(winding - rounded) <= _WINDING_TOL and prev == rounded:
            return int(rounded)
        prev = rounded if abs(winding - rounded) <= _WINDING_TOL else None
        nodes *= 2
    raise ConvergenceError(f"circle winding at {center} (radius {radius}) did not converge")


def _newton_polish(model, z0: complex, multiplicity: int,
                   max_iter: int = 80) -> complex:
    z = complex(z0)
    for _ in range(max_iter):
        zs = np.array([z])
        det = _det_values(model, zs)[0]
        logd = _log_derivative(model, zs)[0]
        if logd == 0:
            break
        step = multiplicity / logd
        z = z - step
        if abs(step) <= 1e-15 * max(1.0, abs(z)):
            break
    return z


@dataclass
class Region:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise UsageError("degenerate search rectangle")


_SPLIT_FRACTIONS = (0.5, 0.5703, 0.4431, 0.6173, 0.3391)


def find_roots(model: OffspringModel, region: Region,
               min_cell: float = 5e-4) -> list:
    """All zeros of det(I - L(z)) in the rectangle, with multiplicities.

    Cells are subdivided until each holds a single (possibly multiple)
    zero within a small diameter, which is then polished by Newton steps
    scaled with the winding multiplicity.  The total winding of the
    region must match the sum of the located pole orders.
    """
    absc = model_abscissa(model)
    if not region.re_min > absc:
        raise UsageError(
            f"search rectangle must lie strictly inside the transform domain "
            f"(Re > {absc})")

    total = _winding_with_retry(model, region.re_min, region.re_max,
                                region.im_min, region.im_max)
    if total == 0:
        return []

    stack = [(region.re_min, region.re_max, region.im_min, region.im_max, total)]
    raw = []
    while stack:
        re0, re1, im0, im1, count = stack.pop()
        width, height = re1 - re0, im1 - im0
        if max(width, height) <= min_cell:
            raw.append((complex(0.5 * (re0 + re1), 0.5 * (im0 + im1)), count))
            continue
        for frac in _SPLIT_FRACTIONS:
            try:
                if width >= height:
                    cut = re0 + frac * width
                    c_left = _winding_with_retry(model, re0, cut, im0, im1)
                    c_right = count - c_left
                    if c_right < 0:
                        continue
                    halves = [(re0, cut, im0, im1, c_left), (cut, re1, im0, im1, c_right)]
                else:
                    cut = im0 + frac * height
                    c_low = _winding_with_retry(model, re0, re1, im0, cut)
                    c_high = count - c_low
                    if c_high < 0:
                        continue
                    halves = [(re0, re1, im0, cut, c_low), (re0, re1, cut, im1, c_high)]
                break
            except ConvergenceError:
                continue
        else:
            raise ConvergenceError(
                f"could not split cell [{re0},{re1}]x[{im0},{im1}] cleanly")
        for cell in halves:
            if cell[4] > 0:
                stack.append(cell)

    roots = []
    for center, count in raw:
        lam = _newton_polish(model, center, count)
        merged = False
        for k, existing in enumerate(roots):
            if abs(existing.lam - lam) <= 1e-6:
                roots[k] = CharacteristicRoot(existing.lam, existing.order + count,
                                              existing.det_residual)
                merged = True
                break
        if not merged:
            det_res = abs(_det_values(model, np.array([lam]))[0])
            roots.append(CharacteristicRoot(lam, count, det_res))

    for root in roots:
        if root.det_residual > _DET_TOL:
            raise ConvergenceError(
                f"root {root.lam} polished only to |det| = {root.det_residual}")
        order = _pole_order(model, root.lam, roots)
        if order != root.order:
            raise ConvergenceError(
                f"winding multiplicity {root.order} at {root.lam} disagrees "
                f"with the local order {order}")
    if sum(r.order for r in roots) != total:
        raise ConvergenceError("sum of pole orders does not match the region winding")
    roots.sort(key=lambda r: (r.lam.real, r.lam.imag))
    return roots


def _winding_with_retry(model, re0, re1, im0, im1) -> int:
    scale = max(re1 - re0, im1 - im0, 1.0)
    for attempt in range(4):
        bump = attempt * 1e-6 * scale
        try:
            return _rect_winding(model, re0 - bump, re1 + bump,
                                 im0 - bump, im1 + bump)
        except ConvergenceError:
            if attempt == 3:
                raise
    raise ConvergenceError("unreachable")


def _isolation_radius(model, lam: complex, others: Sequence = ()) -> float:
    dist_dom = lam.real - model_abscissa(model)
    dists = [abs(lam - o.lam) for o in others if abs(lam - o.lam) > 1e-9]
    dist = min([dist_dom] + dists) if dists else dist_dom
    return min(0.4 * dist, 0.5)


def _pole_order(model, lam: complex, others: Sequence = ()) -> int:
    radius = _isolation_radius(model, lam, others) / 4.0
    return _circle_winding(model, lam, radius)


# ---------------------------------------------------------------------------
# Laurent coefficients
# ---------------------------------------------------------------------------

def laurent_coeffs(model: OffspringModel, root: CharacteristicRoot,
                   other_roots: Sequence = (),
                   start_nodes: int = 256, max_nodes: int = 2048) -> LaurentData:
    """Coefficient matrices of the resolvent's principal part at a root.

    Computes ``(1/2 pi i) * contour integral of R(z) (z - lam)^(n-1)``
    on a circle around the root for n up to the pole order plus two; the
    two extra coefficients must vanish, certifying the order.  The node
    count doubles until the result is stable to 1e-9.
    """
    if root.det_residual > _DET_TOL:
        raise UsageError("root must be refined before Laurent extraction")
    lam = root.lam
    radius = _isolation_radius(model, lam, other_roots)
    if radius < 2.5e-4:
        near = min((abs(lam - o.lam) for o in other_roots
                    if abs(lam - o.lam) > 1e-9), default=lam.real)
        raise ConvergenceError(
            f"contour radius {radius} too small: another singularity within "
            f"{near} of the root at {lam}")
    k = root.order
    n_extract = k + 2

    def extract(nodes: int) -> np.ndarray:
        phi = 2 * math.pi * np.arange(nodes) / nodes
        zs = lam + radius * np.exp(1j * phi)
        res = np.linalg.inv(np.eye(model.p)[None, :, :] - laplace_values(model, zs))
        powers = np.exp(1j * np.outer(np.arange(1, n_extract + 1), phi))
        scales = radius ** np.arange(1, n_extract + 1)
        # coeff_n = r^n / M * sum_j R(z_j) e^(i n phi_j)
        return np.einsum("nm,mij->nij", powers, res) * scales[:, None, None] / nodes

    nodes = start_nodes
    coeffs = extract(nodes)
    while True:
        nodes *= 2
        refined = extract(nodes)
        change = max(
            hs_norm(refined[n] - coeffs[n]) / max(1.0, hs_norm(refined[n]))
            for n in range(n_extract)
        )
        coeffs = refined
        if change <= 1e-9:
            break
        if nodes >= max_nodes:
            raise ConvergenceError(
                f"contour quadrature at {lam} still changing by {change} "
                f"at {nodes} nodes")

    scale = max(1.0, max(hs_norm(coeffs[n]) for n in range(k)))
    for n in range(k, n_extract):
        if hs_norm(coeffs[n]) > 1e-8 * scale:
            raise ConvergenceError(
                f"coefficient {n + 1} beyond the pole order {k} is not zero "
                f"(HS norm {hs_norm(coeffs[n])})")
    # Entries below the quadrature noise floor are exact zeros of the
    # residue structure (the quadrature converges geometrically); snap them
    # so that structurally zero rows stay exactly zero downstream.
    snap = 1e-13 * scale
    for n in range(n_extract):
        view = coeffs[n]
        view.real[np.abs(view.real) <= snap] = 0.0
        view.imag[np.abs(view.imag) <= snap] = 0.0
    # The resolvent's maximal entry pole order can be smaller than the
    # determinant's zero order when the adjugate also vanishes; drop
    # trailing zero coefficients in that case.
    k_eff = k
    while k_eff > 1 and hs_norm(coeffs[k_eff - 1]) <= 1e-8 * scale:
        k_eff -= 1

    matrices = [coeffs[n] for n in range(k_eff)]
    stacked = np.vstack(matrices)
    effective_root = CharacteristicRoot(lam, k_eff, root.det_residual)
    data = LaurentData(root=effective_root, coeffs=matrices, stacked=stacked)
    data.identity_residual = verify_identities(model, data)
    return data


def block_transform_matrix(model: OffspringModel, lam: complex, k: int) -> np.ndarray:
    """The (k p) x (k p) block upper-triangular Toeplitz matrix with block
    (l, l+m) equal to the m-th transform derivative over m factorial."""
    eval_ = laplace_matrix(model, lam, k - 1)
    p = model.p
    big = np.zeros((k * p, k * p), dtype=np.complex128)
    for l in range(k):
        for m in range(k - l):
            big[l * p:(l + 1) * p, (l + m) * p:(l + m + 1) * p] = (
                eval_.derivatives[m] / math.factorial(m)
            )
    return big


def verify_identities(model: OffspringModel, data: LaurentData) -> float:
    """Residual of the coefficient identities at the root.

    Checks both the per-coefficient relations
    ``A_j = sum_m L^(m)(lam)/m! A_(m+j)`` and the equivalent block
    fixed point of the stacked matrix; returns the worst HS residual.
    """
    lam = data.root.lam
    k = data.root.order
    eval_ = laplace_matrix(model, lam, max(k - 1, 0))
    worst = 0.0
    for j in range(1, k + 1):
        acc = np.zeros_like(data.coeffs[0])
        for m in range(0, k - j + 1):
            acc = acc + eval_.derivatives[m] / math.factorial(m) @ data.coeffs[m + j - 1]
        worst = max(worst, hs_norm(data.coeffs[j - 1] - acc))
    big = block_transform_matrix(model, lam, k)
    worst = max(worst, hs_norm(data.stacked - big @ data.stacked))
    return worst


# ---------------------------------------------------------------------------
# Primitive-case structure of the coefficient at the Malthusian root
# ---------------------------------------------------------------------------

def check_primitive_case(model: OffspringModel, perron: PerronData,
                         data: LaurentData, tol: float = 1e-8) -> dict:
    """For a primitive model, the residue at the Malthusian parameter is a
    rank-one scalar multiple of the Perron projection; report the checks."""
    if not perron.primitive:
        return {"applicable": False, "reason": "transform matrix at alpha is not primitive"}
    report = {"applicable": True}
    report["pole_order"] = data.root.order
    report["pole_order_ok"] = data.root.order == 1
    a1 = data.coeffs[0]
    lmat = laplace_matrix(model, perron.alpha).value
    left_res = hs_norm(lmat @ a1 - a1)
    right_res = hs_norm(a1 @ lmat - a1)
    report["projection_residual"] = max(left_res, right_res)
    report["projection_ok"] = report["projection_residual"] <= tol
    svals = np.linalg.svd(a1, compute_uv=False)
    report["second_singular_value"] = float(svals[1]) if len(svals) > 1 else 0.0
    report["rank_one_ok"] = report["second_singular_value"] <= tol
    v = perron.right
    w = perron.left
    scalar = complex(w @ a1 @ v) / complex(w @ v) ** 2
    report["scalar"] = scalar
    recon = scalar * np.outer(v, w)
    report["scalar_projection_residual"] = hs_norm(a1 - recon)
    report["scalar_projection_ok"] = report["scalar_projection_residual"] <= tol * max(1.0, hs_norm(a1))
    report["pass"] = all(report[key] for key in
                         ("pole_order_ok", "projection_ok", "rank_one_ok", "scalar_projection_ok"))
    return report


# ---------------------------------------------------------------------------
# Full analysis pipeline
# ---------------------------------------------------------------------------

@dataclass
class SpectralReport:
    perron: PerronData
    roots: list
    laurent: list

    def to_json(self) -> dict:
        return {
            "alpha": self.perron.alpha,
            "alpha_rho_residual": self.perron.rho_residual,
            "primitive": self.perron.primitive,
            "right_eigvec": list(map(float, self.perron.right)),
            "left_eigvec": list(map(float, self.perron.left)),
            "roots": [
                {"re": r.lam.real, "im": r.lam.imag, "order": r.order,
                 "residual": r.det_residual}
                for r in self.roots
            ],
            "laurent": [
                {
                    "root": {"re": d.root.lam.real, "im": d.root.lam.imag,
                             "order": d.root.order},
                    "matrices": [_matrix_pairs(m) for m in d.coeffs],
                    "identity_residual": d.identity_residual,
                }
                for d in self.laurent
            ],
        }


def _matrix_pairs(mat: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(mat)]


def default_region(model: OffspringModel, alpha: float) -> Region:
    absc = model_abscissa(model)
    lo = max(absc + 0.01 * max(1.0, alpha), alpha / 4.0)
    return Region(re_min=lo, re_max=alpha * 1.25 + 0.25, im_min=-6.0, im_max=6.0)


def analyze(model: OffspringModel, region: Optional[Region] = None) -> SpectralReport:
    """Full spectral pipeline: Malthusian parameter, roots, Laurent data."""
    perron = find_malthusian(model)
    if region is None:
        region = default_region(model, perron.alpha)
    roots = find_roots(model, region)
    laurent = [laurent_coeffs(model, r, other_roots=[o for o in roots if o is not r])
               for r in roots]
    return SpectralReport(perron=perron, roots=roots, laurent=laurent)
