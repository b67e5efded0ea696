"""Image/measurement containers, norms, and image-quality metrics.

Conventions used package-wide:
  - images are float64 grids of shape (height, width), row-major;
  - measurements are flat float64 (radon) or complex128 (fourier) vectors;
  - complex data serializes and feeds networks as interleaved re/im pairs;
  - norms are Euclidean, with the modulus for complex entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 300.0  # sentinel for identical images, keeps CSV output numeric

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class ShapeError(ValueError):
    """Operands have incompatible or unsupported dimensions."""


class ValidationError(ValueError):
    """Values violate a stated precondition (non-finite, bad range, ...)."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Image:
    """Real-valued 2D grid; the object f and every reconstructed estimate."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ShapeError(f"image must be 2D, got shape {vals.shape}")
        if vals.shape[0] < 2 or vals.shape[1] < 2:
            raise ShapeError(f"image must be at least 2x2, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("image contains non-finite values")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Measurement:
    """Flat vector of forward-model samples.

    kind is "radon" (real line integrals) or "fourier" (complex k-space
    samples). length counts samples, not real components.
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("radon", "fourier"):
            raise ValidationError(f"unknown measurement kind {self.kind!r}")
        vals = np.asarray(self.values)
        if vals.ndim != 1:
            raise ShapeError(f"measurement must be 1D, got shape {vals.shape}")
        dtype = np.complex128 if self.kind == "fourier" else np.float64
        vals = vals.astype(dtype)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("measurement contains non-finite values")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def as_real_vector(self) -> np.ndarray:
        """Interleaved (re, im, re, im, ...) view for fourier, identity for radon."""
        if self.kind == "radon":
            return self.values.copy()
        out = np.empty(2 * self.length)
        out[0::2] = self.values.real
        out[1::2] = self.values.imag
        return out

    @classmethod
    def from_real_vector(cls, flat: np.ndarray, kind: str) -> "Measurement":
        flat = np.asarray(flat, dtype=np.float64)
        if kind == "radon":
            return cls(flat, kind=kind)
        if flat.shape[0] % 2 != 0:
            raise ShapeError("interleaved fourier vector must have even length")
        return cls(flat[0::2] + 1j * flat[1::2], kind=kind)


@dataclass(frozen=True)
class MetricsReport:
    """PSNR/SSIM/L2 comparison of a candidate image against a reference."""

    psnr: float
    ssim: float
    l2_error: float

    @classmethod
    def compare(cls, reference: Image, candidate: Image, peak: float) -> "MetricsReport":
        err = l2_norm(Image(reference.values - candidate.values)) \
            if not np.array_equal(reference.values, candidate.values) else 0.0
        return cls(
            psnr=psnr(reference, candidate, peak),
            ssim=ssim(reference, candidate, peak),
            l2_error=err,
        )


def _check_pair(reference: Image, candidate: Image, peak: float) -> None:
    if reference.shape != candidate.shape:
        raise ShapeError(
            f"image dimensions differ: {reference.shape} vs {candidate.shape}"
        )
    if not (peak > 0):
        raise ValidationError(f"peak must be positive, got {peak}")


def psnr(reference: Image, candidate: Image, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; identical images return the 300 dB cap."""
    _check_pair(reference, candidate, peak)
    mse = float(np.mean((reference.values - candidate.values) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _valid_separable_filter(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    # valid-mode correlation with the separable kernel k (x) k
    size = k.shape[0]
    h, w = a.shape
    rows = np.zeros((h, w - size + 1))
    for t in range(size):
        rows += k[t] * a[:, t:t + w - size + 1]
    out = np.zeros((h - size + 1, w - size + 1))
    for t in range(size):
        out += k[t] * rows[t:t + h - size + 1, :]
    return out


def ssim(reference: Image, candidate: Image, peak: float) -> float:
    """Mean local SSIM over Gaussian-weighted sliding windows.

    Window 11x11 with sigma 1.5, K1 = 0.01, K2 = 0.03; windows are taken at
    valid positions only (no padding). Identical inputs return exactly 1.
    """
    _check_pair(reference, candidate, peak)
    if reference.height < SSIM_WINDOW or reference.width < SSIM_WINDOW:
        raise ShapeError(
            f"image {reference.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    if np.array_equal(reference.values, candidate.values):
        return 1.0
    a = reference.values
    b = candidate.values
    k = _gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _valid_separable_filter(a, k)
    mu_b = _valid_separable_filter(b, k)
    # weighted second moments; variances via E[x^2] - mu^2
    var_a = _valid_separable_filter(a * a, k) - mu_a**2
    var_b = _valid_separable_filter(b * b, k) - mu_b**2
    cov = _valid_separable_filter(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def l2_norm(x: Image | Measurement) -> float:
    """Euclidean norm; complex entries contribute their modulus."""
    return float(np.linalg.norm(x.values.ravel()))


# ---------------------------------------------------------------------------
# file formats

_F64_MAGIC = b"F64GRID"


def write_f64grid(path, image: Image) -> None:
    """ASCII header `F64GRID <width> <height>\\n` + row-major little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(f"F64GRID {image.width} {image.height}\n".encode("ascii"))
        fh.write(image.values.astype("<f8").tobytes())


def read_f64grid(path) -> Image:
    with open(path, "rb") as fh:
        header = bytearray()
        while not header.endswith(b"\n"):
            c = fh.read(1)
            if not c:
                raise ValidationError(f"{path}: truncated F64GRID header")
            header.extend(c)
        parts = bytes(header).split()
        if len(parts) != 3 or parts[0] != _F64_MAGIC:
            raise ValidationError(f"{path}: not an F64GRID file")
        try:
            width, height = int(parts[1]), int(parts[2])
        except ValueError:
            raise ValidationError(f"{path}: bad F64GRID dimensions") from None
        payload = fh.read(width * height * 8)
        if len(payload) != width * height * 8:
            raise ValidationError(f"{path}: truncated F64GRID payload")
        vals = np.frombuffer(payload, dtype="<f8").reshape(height, width)
    return Image(vals)


def write_pgm(path, image: Image, window: tuple[float, float]) -> None:
    """8-bit binary PGM with caller-supplied linear display window (lo, hi)."""
    lo, hi = window
    if not (hi > lo):
        raise ValidationError(f"window must satisfy hi > lo, got {window}")
    scaled = (image.values - lo) / (hi - lo)
    pixels = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
