"""Synthetic test objects: ellipse phantoms, glyph inserts, seeded noise.

Phantoms are sums of anti-aliased ellipse indicators, rendered with 4x4
supersampling so unit-intensity coverage is quantized to sixteenths.
Structural inserts overwrite pixels under a boolean glyph, either a
user-supplied bitmap or text set in the built-in 5x7 font.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import Image, Measurement, ValidationError


_SUBDIV = 4  # supersampling factor per axis

# 5x7 bitmap font, one string per row, '#' marks an on pixel
_FONT = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", ".#.#.", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "..##.", ".#...", "#....", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    "?": (".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."),
    "-": (".....", ".....", ".....", ".###.", ".....", ".....", "....."),
    ".": (".....", ".....", ".....", ".....", ".....", "..#..", "..#.."),
    " ": (".....", ".....", ".....", ".....", ".....", ".....", "....."),
}


def _check_finite(name, *values):
    for v in values:
        if not np.isfinite(v):
            raise ValidationError(f"{name} must be finite")


@dataclass(frozen=True)
class Ellipse:
    """One ellipse in grid-fraction coordinates.

    center and axes are fractions of the image extent (x along columns,
    y along rows), rotation is radians counterclockwise, intensity is the
    value the indicator is scaled by. Parts outside the grid simply clip.
    """

    center: tuple
    axes: tuple
    rotation: float
    intensity: float

    def __post_init__(self):
        _check_finite("center", *self.center)
        _check_finite("rotation", self.rotation)
        _check_finite("intensity", self.intensity)
        if not all(np.isfinite(a) and a > 0 for a in self.axes):
            raise ValidationError("ellipse axes must be positive")


@dataclass(frozen=True)
class EllipsePhantomSpec:
    """A phantom recipe: an ellipse list plus the seed that drew it."""

    ellipses: tuple
    seed: int = 0

    def __post_init__(self):
        if not all(isinstance(e, Ellipse) for e in self.ellipses):
            raise ValidationError("ellipses must be Ellipse instances")

    @property
    def count(self) -> int:
        return len(self.ellipses)

    @classmethod
    def seeded(cls, count: int, seed: int) -> "EllipsePhantomSpec":
        """Draw count ellipses with varied sizes, positions and intensities."""
        if count < 0:
            raise ValidationError("count must be non-negative")
        rng = np.random.default_rng(seed)
        ellipses = []
        for _ in range(count):
            ellipses.append(
                Ellipse(
                    center=(rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)),
                    axes=(rng.uniform(0.06, 0.22), rng.uniform(0.06, 0.22)),
                    rotation=rng.uniform(0.0, np.pi),
                    intensity=rng.uniform(0.2, 1.0),
                )
            )
        return cls(ellipses=tuple(ellipses), seed=seed)


def _check_dims(dims):
    if isinstance(dims, (int, np.integer)):
        dims = (int(dims), int(dims))
    if not (isinstance(dims, tuple) and len(dims) == 2):
        raise ValidationError("dims must be a side length or an (h, w) pair")
    h, w = dims
    if h < 2 or w < 2:
        raise ValidationError("phantom dims must be at least 2x2")
    return int(h), int(w)


def make_phantom(spec: EllipsePhantomSpec, dims) -> Image:
    """Render the spec's ellipses as a sum of anti-aliased indicators."""
    h, w = _check_dims(dims)
    sub = (np.arange(_SUBDIV) + 0.5) / _SUBDIV
    ys = ((np.arange(h)[:, None] + sub[None, :]).ravel()) / h
    xs = ((np.arange(w)[:, None] + sub[None, :]).ravel()) / w
    acc = np.zeros((h, w))
    for e in spec.ellipses:
        dx = xs[None, :] - e.center[0]
        dy = ys[:, None] - e.center[1]
        cos, sin = np.cos(e.rotation), np.sin(e.rotation)
        u = (cos * dx + sin * dy) / e.axes[0]
        v = (-sin * dx + cos * dy) / e.axes[1]
        inside = u * u + v * v <= 1.0
        coverage = inside.reshape(h, _SUBDIV, w, _SUBDIV).mean(axis=(1, 3))
        acc += e.intensity * coverage
    return Image(acc)


def text_glyph(text: str) -> np.ndarray:
    """Set text in the built-in 5x7 font as a boolean bitmap.

    Characters are separated by one blank column; the result is 7 rows by
    6*len(text)-1 columns.
    """
    if not text:
        raise ValidationError("text must not be empty")
    columns = []
    for i, ch in enumerate(text.upper()):
        if ch not in _FONT:
            raise ValidationError(f"no glyph for character {ch!r}")
        block = np.array([[c == "#" for c in row] for row in _FONT[ch]], dtype=bool)
        if i:
            columns.append(np.zeros((7, 1), dtype=bool))
        columns.append(block)
    return np.hstack(columns)


@dataclass(frozen=True)
class StructuralInsert:
    """A boolean glyph stamped into an image at a pixel offset."""

    glyph: np.ndarray
    position: tuple
    intensity: float

    def __post_init__(self):
        g = np.asarray(self.glyph, dtype=bool)
        if g.ndim != 2:
            raise ValidationError("glyph must be a 2d boolean bitmap")
        object.__setattr__(self, "glyph", g)
        r, c = self.position
        object.__setattr__(self, "position", (int(r), int(c)))
        _check_finite("intensity", self.intensity)


def insert_structure(f: Image, insert: StructuralInsert) -> Image:
    """Overwrite the pixels under the glyph with the insert intensity."""
    gh, gw = insert.glyph.shape
    r, c = insert.position
    h, w = f.shape
    if r < 0 or c < 0 or r + gh > h or c + gw > w:
        raise ValidationError(
            f"insert {gh}x{gw} at {insert.position} does not fit inside {h}x{w}"
        )
    out = f.values.copy()
    out[r:r + gh, c:c + gw][insert.glyph] = insert.intensity
    return Image(out)


def add_noise(p, sigma: float, seed: int):
    """Add seeded white Gaussian noise; the input type is preserved.

    Complex measurements get independent noise on the real and imaginary
    components, each with standard deviation sigma.
    """
    if not (np.isfinite(sigma) and sigma >= 0.0):
        raise ValidationError("sigma must be finite and non-negative")
    if sigma == 0.0:
        return p
    rng = np.random.default_rng(seed)
    if isinstance(p, Image):
        return Image(p.values + sigma * rng.standard_normal(p.shape))
    if isinstance(p, Measurement):
        x = p.as_real_vector()
        return Measurement.from_real_vector(x + sigma * rng.standard_normal(x.shape), p.kind)
    raise ValidationError("add_noise expects an Image or a Measurement")
