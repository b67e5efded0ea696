"""Forward models: discrete parallel-beam Radon transform and masked unitary DFT.

Both models are real-linear maps with construction-exact adjoints. The Radon
pair shares one sparse ray-weight table between apply and adjoint; the Fourier
pair is the orthonormal FFT restricted to a boolean frequency mask, with the
adjoint identity holding in the real inner product on the interleaved re/im
measurement view.

Radon discretization: footprint ray integration with unit pixel spacing. For
every view, the projection of the unit-square pixel onto the detector axis is
a trapezoid (the convolution of two boxes of widths |cos| and |sin|, height
matching the chord through the square), and that trapezoid is integrated
against unit hat functions centered on the detector bins. Because the hats
are a partition of unity that reproduces linear functions, every interior
pixel's weights sum to 1 and have first moment exactly at the projected
center, at every angle: per-view mass and detector-axis centroids are
angle-independent, and point-sampling Moire artifacts at diagonal views never
arise. Detector count is ceil(sqrt(2)*side), so bins span the image diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from acidlab.grid import Image, Measurement, ShapeError, ValidationError

MASK_PATTERNS = ("gaussian2d", "radial", "full")


def _default_detectors(side: int) -> int:
    return int(np.ceil(np.sqrt(2.0) * side))


@dataclass(eq=False)
class RadonGeometry:
    """Parallel-beam geometry: uniform angles over [0, pi), centered detectors."""

    side: int
    angles: np.ndarray
    num_detectors: int = 0

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.side < 2:
            raise ValidationError(f"side must be >= 2, got {self.side}")
        if self.angles.ndim != 1 or self.angles.size < 1:
            raise ValidationError("need at least one projection angle")
        if np.any(self.angles < 0) or np.any(self.angles >= np.pi):
            raise ValidationError("angles must lie in [0, pi)")
        if np.any(np.diff(self.angles) <= 0):
            raise ValidationError("angles must be strictly increasing")
        if self.num_detectors == 0:
            self.num_detectors = _default_detectors(self.side)
        self._weights = None

    @classmethod
    def uniform(cls, side: int, num_angles: int) -> "RadonGeometry":
        if num_angles < 1:
            raise ValidationError(f"num_angles must be >= 1, got {num_angles}")
        angles = np.arange(num_angles) * np.pi / num_angles
        return cls(side=side, angles=angles)

    @property
    def num_angles(self) -> int:
        return self.angles.size

    @property
    def row_count(self) -> int:
        return self.num_angles * self.num_detectors

    def weights(self) -> sparse.csr_matrix:
        """Sparse ray-weight matrix, built once and shared by apply/adjoint."""
        if self._weights is None:
            self._weights = _build_radon_weights(self)
        return self._weights


def _footprint_iint(u: np.ndarray, a: float, b: float) -> np.ndarray:
    """Antiderivative of the square-pixel projection CDF, zero left of support.

    The projection profile is box(a) * box(b) with a = max(|cos|,|sin|) >= b:
    a trapezoid of support (a+b), flat top 1/a, unit area (so weights carry
    line-integral scale). Hat-function weights come out as second differences
    of this function.
    """
    if b < 1e-12:
        # footprint degenerates to a single box of width a
        h = a / 2.0
        mid = 0.5 * (u + h) + (u * u - h * h) / (2 * a)
        return np.select([u <= -h, u < h], [0.0, mid], default=u)
    l1 = (a - b) / 2.0
    l2 = (a + b) / 2.0
    ramp_up = (u + l2) ** 3 / (6 * a * b)
    middle = b * b / (6 * a) + 0.5 * (u + l1) + (u * u - l1 * l1) / (2 * a)
    ramp_down = u + (l2 - u) ** 3 / (6 * a * b)
    return np.select(
        [u <= -l2, u < -l1, u <= l1, u < l2],
        [0.0, ramp_up, middle, ramp_down],
        default=u,
    )


def _build_radon_weights(g: RadonGeometry) -> sparse.csr_matrix:
    n = g.side
    c = (n - 1) / 2.0
    det_c = (g.num_detectors - 1) / 2.0
    # flattened row-major pixel coordinates relative to the image center
    x = np.tile(np.arange(n) - c, n)
    y = np.repeat(np.arange(n) - c, n)
    pix = np.arange(n * n)
    rows, cols, data = [], [], []
    for ang, th in enumerate(g.angles):
        a = max(abs(np.cos(th)), abs(np.sin(th)))
        b = min(abs(np.cos(th)), abs(np.sin(th)))
        half_supp = (a + b) / 2.0 + 1.0  # footprint plus hat half-width
        t = x * np.cos(th) + y * np.sin(th) + det_c
        first = np.ceil(t - half_supp).astype(np.int64)
        for k in range(4):  # smoothed footprint spans at most 4 detector hats
            d = (first + k) - t
            w = (
                _footprint_iint(d + 1.0, a, b)
                - 2.0 * _footprint_iint(d, a, b)
                + _footprint_iint(d - 1.0, a, b)
            )
            bins = first + k
            ok = (bins >= 0) & (bins < g.num_detectors) & (w > 0)
            rows.append(ang * g.num_detectors + bins[ok])
            cols.append(pix[ok])
            data.append(w[ok])
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.row_count, n * n),
    )
    return mat.tocsr()


def select_views(full_angles: int, kept: int, side: int = 64) -> RadonGeometry:
    """Geometry keeping `kept` of `full_angles` views, uniformly spaced over [0, pi)."""
    if kept < 1:
        raise ValidationError(f"kept must be >= 1, got {kept}")
    if kept > full_angles:
        raise ValidationError(f"kept ({kept}) exceeds full_angles ({full_angles})")
    return RadonGeometry.uniform(side=side, num_angles=kept)


def radon_apply(geometry: RadonGeometry, f: Image) -> Measurement:
    """Line integrals of f for every (angle, detector) bin, angle-major order."""
    if f.shape != (geometry.side, geometry.side):
        raise ShapeError(
            f"image {f.shape} does not match geometry side {geometry.side}"
        )
    vals = geometry.weights() @ f.values.ravel()
    return Measurement(vals, kind="radon")


def radon_adjoint(geometry: RadonGeometry, p: Measurement) -> Image:
    """Exact transpose of radon_apply (backprojection with the same weights)."""
    if p.length != geometry.row_count:
        raise ShapeError(
            f"measurement length {p.length} != {geometry.row_count} rays"
        )
    vals = geometry.weights().T @ p.values
    return Image(vals.reshape(geometry.side, geometry.side))


# ---------------------------------------------------------------------------
# Fourier path

@dataclass(eq=False)
class FourierMask:
    """Boolean frequency mask in unshifted DFT layout (DC at [0, 0]).

    sampling_rate records the achieved fraction of sampled cells; DC is always
    sampled. Measurement order is row-major over mask-true locations.
    """

    grid: np.ndarray
    sampling_rate: float
    pattern: str
    seed: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise ShapeError(f"mask grid must be 2D, got {self.grid.shape}")
        if not self.grid[0, 0]:
            raise ValidationError("DC (zero frequency) must always be sampled")
        achieved = self.grid.sum() / self.grid.size
        if abs(achieved - self.sampling_rate) * self.grid.size > 1.0:
            raise ValidationError(
                f"sampling_rate {self.sampling_rate} is off the achieved "
                f"fraction {achieved} by more than one grid cell"
            )
        self.grid.flags.writeable = False

    @property
    def dims(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def popcount(self) -> int:
        return int(self.grid.sum())


def _centered_frequencies(n: int) -> np.ndarray:
    return np.fft.fftfreq(n) * n  # 0, 1, ..., -n/2 ... -1 in DFT layout


def _gaussian2d_grid(n: int, rate: float, seed: int) -> np.ndarray:
    k = int(round(rate * n * n))
    fx = _centered_frequencies(n)
    r2 = fx[:, None] ** 2 + fx[None, :] ** 2
    sigma = n / 6.0
    w = np.exp(-r2 / (2.0 * sigma * sigma)).ravel()
    u = np.random.default_rng(seed).random(n * n)
    # weighted sampling without replacement via largest keys u**(1/w);
    # compare in log domain to dodge underflow for far-out frequencies
    with np.errstate(divide="ignore"):
        keys = np.log(u) / w
    keys[0] = np.inf  # force DC
    chosen = np.argpartition(keys, -k)[-k:]
    grid = np.zeros(n * n, dtype=bool)
    grid[chosen] = True
    return grid.reshape(n, n)


def _radial_grid(n: int, rate: float) -> np.ndarray:
    num_spokes = max(1, int(round(rate * n)))
    centered = np.zeros((n, n), dtype=bool)
    half = n // 2
    axis = np.arange(-half, n - half)
    for k in range(num_spokes):
        phi = k * np.pi / num_spokes
        # one cell per step of the dominant axis keeps spokes one cell thick
        if abs(np.cos(phi)) >= abs(np.sin(phi)):
            fx = axis
            fy = np.rint(axis * np.tan(phi)).astype(int)
        else:
            fy = axis
            fx = np.rint(axis / np.tan(phi)).astype(int)
        ok = (fx >= -half) & (fx < n - half) & (fy >= -half) & (fy < n - half)
        centered[fy[ok] + half, fx[ok] + half] = True
    centered[half, half] = True
    return np.fft.ifftshift(centered)


def make_mask(pattern: str, rate: float, dims: int, seed: int) -> FourierMask:
    """Deterministic sampling mask; DC always included.

    gaussian2d draws exactly round(rate*N) cells with density proportional to
    a centered Gaussian of standard deviation dims/6; radial rasterizes
    max(1, round(rate*dims)) equiangular spokes through DC.
    """
    if pattern not in MASK_PATTERNS:
        raise ValidationError(f"unknown mask pattern {pattern!r}")
    if not (0 < rate <= 1):
        raise ValidationError(f"rate must be in (0, 1], got {rate}")
    n = int(dims)
    if round(rate * n * n) < 1:
        raise ValidationError(f"rate {rate} selects no cells on a {n}x{n} grid")
    if pattern == "full":
        grid = np.ones((n, n), dtype=bool)
    elif pattern == "gaussian2d":
        grid = _gaussian2d_grid(n, rate, seed)
    else:
        grid = _radial_grid(n, rate)
    achieved = grid.sum() / grid.size
    return FourierMask(grid=grid, sampling_rate=float(achieved), pattern=pattern, seed=seed)


def fourier_apply(mask: FourierMask, f: Image) -> Measurement:
    """Orthonormal 2D DFT of f at mask-true frequencies, row-major order."""
    if f.shape != mask.dims:
        raise ShapeError(f"image {f.shape} does not match mask {mask.dims}")
    spectrum = np.fft.fft2(f.values, norm="ortho")
    return Measurement(spectrum[mask.grid], kind="fourier")


def fourier_adjoint(mask: FourierMask, p: Measurement) -> Image:
    """Zero-fill unmeasured frequencies, inverse orthonormal DFT, real part."""
    if p.length != mask.popcount:
        raise ShapeError(
            f"measurement length {p.length} != mask popcount {mask.popcount}"
        )
    spectrum = np.zeros(mask.dims, dtype=np.complex128)
    spectrum[mask.grid] = p.values
    return Image(np.fft.ifft2(spectrum, norm="ortho").real)


# ---------------------------------------------------------------------------
# tagged wrapper

@dataclass(eq=False)
class ForwardModel:
    """Linear measurement operator A with apply/adjoint and its sampling mask."""

    kind: str
    geometry: RadonGeometry | None = None
    mask: FourierMask | None = None
    row_count: int = 0
    col_count: int = 0
    image_shape: tuple[int, int] = field(default=(0, 0))

    def apply(self, f: Image) -> Measurement:
        if self.kind == "radon":
            return radon_apply(self.geometry, f)
        return fourier_apply(self.mask, f)

    def adjoint(self, p: Measurement) -> Image:
        if p.kind != self.kind:
            raise ValidationError(
                f"measurement kind {p.kind!r} does not match model kind {self.kind!r}"
            )
        if self.kind == "radon":
            return radon_adjoint(self.geometry, p)
        return fourier_adjoint(self.mask, p)


def radon_model(geometry: RadonGeometry) -> ForwardModel:
    return ForwardModel(
        kind="radon",
        geometry=geometry,
        row_count=geometry.row_count,
        col_count=geometry.side * geometry.side,
        image_shape=(geometry.side, geometry.side),
    )


def fourier_model(mask: FourierMask) -> ForwardModel:
    h, w = mask.dims
    return ForwardModel(
        kind="fourier",
        mask=mask,
        row_count=mask.popcount,
        col_count=h * w,
        image_shape=(h, w),
    )
