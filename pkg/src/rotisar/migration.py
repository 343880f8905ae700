"""Two-point migration of cross-spectra and image extraction.

The interference matrix over body-frame grid points is

    X[k, k'] = sum_{s, w, R, R'} conj(A[R, k]) C[R, R'] A[R', k'],

with ``A[R, k] = exp(i w tau_{R,k}(s))`` and ``C`` the cross-spectrum of
receivers R and R'.  When ``C = u u^H`` this collapses to ``b b^H`` with
``b = A^H u``, so accumulation never forms receiver-pair products.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates, maximum_filter

from .geometry import RotationParams
from .waveform import EchoSet, Scenario, delays


class EmptyGridError(ValueError):
    pass


class ZeroImageError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class PeakNotFoundError(ValueError):
    pass


class DegeneratePairWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ImageGrid:
    """Uniform square grid of body-frame offsets containing the origin.

    Points are stored row-major: index ``i * n + j`` has coordinates
    ``(x[j], y[i])``.
    """

    per_side: int
    spacing: float

    def __post_init__(self):
        if self.per_side < 1:
            raise EmptyGridError("grid needs at least one point per side")
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def covering(cls, extent: float, spacing: float) -> "ImageGrid":
        return cls(int(round(extent / spacing)), spacing)

    @property
    def coords(self) -> np.ndarray:
        n = self.per_side
        return (np.arange(n) - n // 2) * self.spacing

    @property
    def extent(self) -> float:
        return self.per_side * self.spacing

    @property
    def size(self) -> int:
        return self.per_side ** 2

    @property
    def points(self) -> np.ndarray:
        c = self.coords
        gx, gy = np.meshgrid(c, c, indexing="xy")
        return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def reshape(self, values) -> np.ndarray:
        return np.asarray(values).reshape(self.per_side, self.per_side)

    def index_of(self, xy) -> tuple[float, float]:
        """Fractional (row, column) position of a planar offset."""
        c0 = self.per_side // 2
        return xy[1] / self.spacing + c0, xy[0] / self.spacing + c0


@dataclass(frozen=True)
class InterferenceMatrix:
    matrix: np.ndarray
    grid: ImageGrid
    pulses: int = 0
    frequencies: int = 0
    receivers: int = 0


@dataclass(frozen=True)
class Image:
    values: np.ndarray
    grid: ImageGrid
    kind: str
    eigenvalue: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def as_matrix(self) -> np.ndarray:
        return self.grid.reshape(self.values)


def sensing_matrix(s, omega, scenario: Scenario, rotation: RotationParams, grid: ImageGrid,
                   tau=None) -> np.ndarray:
    """A[s, R, k] at one angular frequency (or precomputed delays ``tau``)."""
    if tau is None:
        tau = delays(s, scenario, grid.points, rotation)  # (S, K, R)
    return np.exp(1j * omega * np.swapaxes(tau, 1, 2))


def _require(rotation):
    if rotation is None:
        raise ValueError("migration needs rotation parameters (estimated or true)")


# above this many delay entries the recurrence state costs too much memory
_RECURRENCE_BUDGET = 30_000_000


def _phase_factors(tau, omegas, reseed: int = 16, recurrence: bool = True):
    """Yield exp(i w tau) for each w in ``omegas``.

    On a uniform frequency grid consecutive factors differ by the constant
    exp(i dw tau), so a complex multiply replaces most exponentials.  The
    product is re-seeded from an exact exponential every ``reseed`` steps,
    which keeps the accumulated rounding error near 1e-15.
    """
    w = np.asarray(omegas, float)
    d = np.diff(w)
    uniform = recurrence and len(w) > 2 and np.all(np.abs(d - d[0]) <= 1e-12 * np.abs(w).max())
    if not uniform:
        for om in w:
            yield np.exp(1j * om * tau)
        return
    step = np.exp(1j * d[0] * tau)
    cur = None
    for i, om in enumerate(w):
        if i % reseed == 0:
            cur = np.exp(1j * om * tau)
        else:
            cur = cur * step
        yield cur


def _accumulate(vectors_fn, s, omegas, scenario, rotation, grid, chunk):
    """Sum of b b^H over frequencies (outer loop) and pulse chunks (inner).

    ``vectors_fn(i0, i1, iw)`` returns weights (S', V, R) and signs (S', V)
    for pulses ``i0:i1`` at frequency index ``iw``.
    """
    k = grid.size
    x = np.zeros((k, k), complex)
    pts = grid.points
    starts = range(0, len(s), chunk)
    recur = len(s) * k * scenario.layout.num_receivers <= _RECURRENCE_BUDGET
    gens = [_phase_factors(delays(s[i0:i0 + chunk], scenario, pts, rotation), omegas,
                           recurrence=recur) for i0 in starts]
    for iw in range(len(omegas)):
        for gen, i0 in zip(gens, starts):
            a = next(gen)  # (S', K, R)
            weights, signs = vectors_fn(i0, i0 + chunk, iw)
            b = np.einsum("skr,svr->svk", a.conj(), weights).reshape(-1, k)
            sg = signs.reshape(-1)
            pos = b[sg > 0]
            neg = b[sg < 0]
            if len(pos):
                x += pos.T @ pos.conj()
            if len(neg):
                x -= neg.T @ neg.conj()
    return x


def migrate_echoes(echoes: EchoSet, scenario: Scenario, rotation: RotationParams,
                   grid: ImageGrid, chunk: int = 32) -> InterferenceMatrix:
    """X built from frequency-domain echoes, where every cross-spectrum is u u^H."""
    _require(rotation)
    if echoes.domain != "freq":
        raise ValueError("migration needs frequency-domain echoes")
    u = echoes.data  # (R, S, W)

    def vectors(i0, i1, iw):
        w = np.moveaxis(u[:, i0:i1, iw], 0, 1)[:, None, :]
        return w, np.ones(w.shape[:2])

    x = _accumulate(vectors, echoes.slow_times, echoes.axis, scenario, rotation, grid, chunk)
    return InterferenceMatrix(x, grid, len(echoes.slow_times), len(echoes.axis),
                              echoes.num_receivers)


def migrate_two_point(correlations, scenario: Scenario, rotation: RotationParams,
                      grid: ImageGrid, chunk: int = 32, rel_cutoff: float = 1e-13
                      ) -> InterferenceMatrix:
    """X from stored cross-spectra.

    Each receiver-pair matrix C(s, w) is split into signed rank-1 terms by a
    Hermitian eigendecomposition; terms below ``rel_cutoff`` of the largest
    eigenvalue magnitude are dropped.
    """
    _require(rotation)
    if correlations.cross is None:
        raise ValueError("correlation set has no cross-spectra")
    c = np.moveaxis(correlations.cross, (2, 3), (0, 1))  # (S, W, R, R)
    c = 0.5 * (c + np.conj(np.swapaxes(c, -1, -2)))
    lam, vec = np.linalg.eigh(c)
    scale = np.max(np.abs(lam), initial=0.0)
    keep = np.abs(lam) > rel_cutoff * scale if scale > 0 else np.zeros_like(lam, bool)
    # weights: sqrt|lambda| * eigenvector, shape (S, W, V, R)
    weights = np.swapaxes(vec, -1, -2) * np.sqrt(np.abs(lam))[..., None]
    signs = np.where(keep, np.sign(lam), 0.0)

    def vectors(i0, i1, iw):
        return weights[i0:i1, iw], signs[i0:i1, iw]

    x = _accumulate(vectors, correlations.slow_times, correlations.freqs, scenario, rotation,
                    grid, chunk)
    return InterferenceMatrix(x, grid, len(correlations.slow_times), len(correlations.freqs),
                              correlations.cross.shape[0])


def _normalize(values, kind, grid, eigenvalue=None) -> Image:
    values = np.clip(np.asarray(values, float), 0.0, None)
    top = values.max(initial=0.0)
    if top <= 0:
        raise ZeroImageError(f"{kind} image is identically zero")
    return Image(values / top, grid, kind, eigenvalue)


def image_single_point(x: InterferenceMatrix) -> Image:
    """Diagonal of X: every grid point migrated against itself."""
    return _normalize(np.real(np.diag(x.matrix)), "single-point", x.grid)


def _start_block(k, m):
    # ones plus a fixed deterministic perturbation; no RNG state involved
    idx = np.arange(k)[:, None]
    col = np.arange(m)[None, :]
    return np.ones((k, m)) + 0.1 * np.cos(0.7 * (idx + 1) * (col + 1)) + 0.01 * col


def subspace_iteration(matrix, m: int, tol: float = 1e-10, max_iter: int = 10_000,
                       block: int | None = None):
    """Leading ``m`` eigenpairs of a Hermitian matrix by block power iteration.

    A block of ``block >= m`` vectors is repeatedly multiplied by the matrix
    and re-orthonormalized; a Rayleigh-Ritz step on the block gives the
    current eigenvalue estimates.  With ``block == 1`` this is plain power
    iteration.  Iteration stops once the leading ``m`` Ritz values change by
    less than ``tol`` relative and their residuals are below ``sqrt(tol)``
    times the top eigenvalue.

    Returns ``(eigenvalues, eigenvectors, iterations, residuals)`` with
    eigenvalues descending and eigenvectors as columns.
    """
    a = np.asarray(matrix)
    k = a.shape[0]
    if m > k:
        raise ValueError("cannot ask for more eigenpairs than the matrix size")
    p = min(k, max(m, block if block is not None else m + 8))
    q, _ = np.linalg.qr(_start_block(k, p).astype(a.dtype))
    prev = None
    for it in range(1, max_iter + 1):
        z = a @ q
        # Rayleigh-Ritz on the current block
        h = q.conj().T @ z
        h = 0.5 * (h + h.conj().T)
        theta, y = np.linalg.eigh(h)
        order = np.argsort(theta)[::-1]
        theta, y = theta[order], y[:, order]
        v = q @ y
        lead = theta[:m]
        scale = max(abs(theta[0]), np.finfo(float).tiny)
        res = np.linalg.norm(z @ y[:, :m] - v[:, :m] * lead, axis=0)
        if prev is not None and np.all(np.abs(lead - prev) <= tol * scale) \
                and np.all(res <= np.sqrt(tol) * scale):
            return lead, v[:, :m], it, res
        prev = lead
        q, _ = np.linalg.qr(z @ y)
    raise ConvergenceError(f"no convergence after {max_iter} iterations; "
                           f"residuals {np.array2string(res, precision=3)}")


def _fix_phase(v):
    j = np.argmax(np.abs(v))
    return v * (np.abs(v[j]) / v[j])


def image_rank1(x: InterferenceMatrix, tol: float = 1e-10, max_iter: int = 10_000,
                block: int = 8) -> Image:
    """|v_1|^2 for the top eigenvector of X, normalized to max 1."""
    lam, vec, iters, res = subspace_iteration(x.matrix, 2 if x.grid.size > 1 else 1, tol,
                                              max_iter, block)
    if len(lam) > 1 and lam[0] - lam[1] < 1e-6 * abs(lam[0]):
        warnings.warn("top two eigenvalues are nearly degenerate", DegeneratePairWarning)
    v = _fix_phase(vec[:, 0])
    img = _normalize(np.abs(v) ** 2, "rank-1", x.grid, float(lam[0]))
    img.extra.update(iterations=iters, residual=float(res[0]))
    return img


def eigen_spectrum(x: InterferenceMatrix, m: int, tol: float = 1e-12,
                   max_iter: int = 20_000) -> tuple[np.ndarray, np.ndarray]:
    """Leading ``m`` eigenvalues (descending) and eigenvectors of X."""
    lam, vec, _, _ = subspace_iteration(x.matrix, m, tol, max_iter, block=m + 8)
    return lam, np.column_stack([_fix_phase(v) for v in vec.T])


def kirchhoff_field(echoes: EchoSet, scenario: Scenario, rotation: RotationParams,
                    grid: ImageGrid, chunk: int = 32) -> np.ndarray:
    """rho_tilde[k] = sum_{s, w, R} conj(A[R, k]) u_R(s, w)."""
    _require(rotation)
    if echoes.domain != "freq":
        raise ValueError("Kirchhoff migration needs frequency-domain echoes")
    pts = grid.points
    out = np.zeros(grid.size, complex)
    s = echoes.slow_times
    for i0 in range(0, len(s), chunk):
        tau = delays(s[i0:i0 + chunk], scenario, pts, rotation)  # (S', K, R)
        u = echoes.data[:, i0:i0 + chunk]  # (R, S', W)
        for iw, a in enumerate(_phase_factors(tau, echoes.axis)):
            out += np.einsum("skr,rs->k", a.conj(), u[:, :, iw])
    return out


def image_kirchhoff(echoes: EchoSet, scenario: Scenario, rotation: RotationParams,
                    grid: ImageGrid) -> Image:
    return _normalize(np.abs(kirchhoff_field(echoes, scenario, rotation, grid)),
                      "kirchhoff", grid)


def measure_spot(image, grid: ImageGrid, peak_position, direction, search: int = 2,
                 oversample: int = 16) -> float:
    """FWHM through the local maximum nearest ``peak_position`` along ``direction``.

    The maximum is searched within ``search`` cells; the profile is sampled
    by bilinear interpolation and the half-maximum crossings are located by
    linear interpolation between profile samples.
    """
    vals = image.as_matrix if isinstance(image, Image) else np.asarray(image, float)
    n = vals.shape[0]
    r0, c0 = (int(round(v)) for v in grid.index_of(peak_position))
    lo_r, hi_r = max(r0 - search, 1), min(r0 + search, n - 2)
    lo_c, hi_c = max(c0 - search, 1), min(c0 + search, n - 2)
    best = None
    for r in range(lo_r, hi_r + 1):
        for c in range(lo_c, hi_c + 1):
            patch = vals[r - 1:r + 2, c - 1:c + 2]
            if vals[r, c] >= patch.max() and vals[r, c] > patch.min() and \
                    (best is None or vals[r, c] > vals[best]):
                best = (r, c)
    if best is None:
        raise PeakNotFoundError("no local maximum near the requested position")
    d = np.asarray(direction, float)[:2]
    d = d / np.linalg.norm(d)
    # refine the peak with a separable parabola so widths are not biased by the grid
    r, c = best
    def vertex(a, b, cc):
        den = a - 2 * b + cc
        return 0.5 * (a - cc) / den if den != 0 else 0.0
    pr = r + vertex(vals[r - 1, c], vals[r, c], vals[r + 1, c])
    pc = c + vertex(vals[r, c - 1], vals[r, c], vals[r, c + 1])
    peak = float(map_coordinates(vals, [[pr], [pc]], order=1)[0])
    half = 0.5 * peak
    step = 1.0 / oversample
    ts = np.arange(0, n * 1.5, step)

    def crossing(sign):
        rows = pr + sign * ts * d[1]
        cols = pc + sign * ts * d[0]
        inside = (rows >= 0) & (rows <= n - 1) & (cols >= 0) & (cols <= n - 1)
        prof = map_coordinates(vals, [rows[inside], cols[inside]], order=1)
        below = np.nonzero(prof < half)[0]
        if len(below) == 0:
            raise PeakNotFoundError("spot does not fall to half maximum inside the grid")
        i = below[0]
        frac = (prof[i - 1] - half) / (prof[i - 1] - prof[i])
        return (i - 1 + frac) * step

    return (crossing(+1) + crossing(-1)) * grid.spacing


def find_image_peaks(image: Image, threshold: float = 0.5) -> np.ndarray:
    """Planar positions of local maxima at or above ``threshold`` (max is 1).

    Sorted by decreasing value.
    """
    vals = image.as_matrix
    local = (vals == maximum_filter(vals, size=3, mode="constant", cval=-np.inf))
    rows, cols = np.nonzero(local & (vals >= threshold))
    c = image.grid.coords
    order = np.argsort(-vals[rows, cols])
    return np.column_stack([c[cols[order]], c[rows[order]]])


@dataclass(frozen=True)
class PeakMatch:
    """Detected peaks compared with the true scatterer positions."""

    matched: int
    spurious: int
    detected: int

    @property
    def score(self) -> int:
        """Matched targets minus spurious peaks, floored at zero."""
        return max(0, self.matched - self.spurious)

    def exact(self, count: int) -> bool:
        return self.matched == count and self.spurious == 0


def match_peaks(image: Image, truth, threshold: float = 0.5) -> PeakMatch:
    """Greedy one-to-one matching of peaks to targets within one grid cell.

    Peaks are visited strongest first; a peak matches the nearest unmatched
    target whose offset is at most one cell spacing in each coordinate.
    Unmatched peaks count as spurious.
    """
    peaks = find_image_peaks(image, threshold)
    targets = np.asarray(truth, float)[:, :2]
    h = image.grid.spacing * (1 + 1e-9)
    free = np.ones(len(targets), bool)
    matched = 0
    for p in peaks:
        near = free & np.all(np.abs(targets - p) <= h, axis=1)
        if np.any(near):
            cand = np.nonzero(near)[0]
            best = cand[np.argmin(np.linalg.norm(targets[cand] - p, axis=1))]
            free[best] = False
            matched += 1
    return PeakMatch(matched, len(peaks) - matched, len(peaks))


def count_true_peaks(image: Image, truth, threshold: float = 0.5) -> int:
    """Number of true scatterers recovered by a detected peak."""
    return match_peaks(image, truth, threshold).matched
