"""Reconstruction operators and their diagnostics.

A reconstruction operator maps a measurement back to an image estimate. Two
implementations ship here: AdjointRecon (zero-filled adjoint for Fourier
models, ramp-filtered backprojection for Radon) and AutomapMini, a dense
two-layer tanh network with hand-written forward, vector-Jacobian product,
and full-batch gradient-descent training. Both expose the same small surface
so iterative solvers and attack loops can treat them interchangeably.

Diagnostics: bren_ratio measures the relative reconstruction error of an
operator composed with its forward model on a known image (below 1 means the
composition is a contraction on that image), and lipschitz_estimate probes an
empirical lower bound on the end-to-end Lipschitz constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from acidlab.grid import Image, Measurement, ShapeError, ValidationError, l2_norm
from acidlab.models import ForwardModel

MAX_DENSE_SIDE = 64


class CapabilityError(RuntimeError):
    """Operation requested from an operator that does not support it."""


class ReconOperator:
    """Base operator: holds the forward model and capability flags."""

    kind = "base"
    differentiable = False
    trainable = False

    def __init__(self, model: ForwardModel):
        self.model = model

    def forward(self, p: Measurement) -> Image:
        raise NotImplementedError

    def vjp(self, p: Measurement, cotangent: Image) -> Measurement:
        raise CapabilityError(f"{type(self).__name__} has no vjp")


def _check_measurement(model: ForwardModel, p: Measurement) -> None:
    if p.kind != model.kind:
        raise ValidationError(
            f"measurement kind {p.kind!r} does not match model kind {model.kind!r}"
        )
    if p.length != model.row_count:
        raise ShapeError(f"measurement length {p.length}, model expects {model.row_count}")


def recon_forward(op: ReconOperator, p: Measurement) -> Image:
    _check_measurement(op.model, p)
    out = op.forward(p)
    if out.shape != op.model.image_shape:
        raise ShapeError(f"operator produced {out.shape}, model expects {op.model.image_shape}")
    return out


def recon_vjp(op: ReconOperator, p: Measurement, cotangent: Image) -> Measurement:
    if not op.differentiable:
        raise CapabilityError(f"{type(op).__name__} is not differentiable")
    _check_measurement(op.model, p)
    if cotangent.shape != op.model.image_shape:
        raise ShapeError(f"cotangent shape {cotangent.shape} != {op.model.image_shape}")
    return op.vjp(p, cotangent)


# ---------------------------------------------------------------------------
# linear baseline

def _ramp_filter(rows: np.ndarray) -> np.ndarray:
    """Multiply each projection by |frequency| in the DFT domain.

    The filter is real and even, so the induced circulant is symmetric and
    the operator stays its own transpose.
    """
    ramp = np.abs(np.fft.fftfreq(rows.shape[1]))
    return np.fft.ifft(np.fft.fft(rows, axis=1) * ramp, axis=1).real


class AdjointRecon(ReconOperator):
    """Zero-filled adjoint (Fourier) or ramp-filtered backprojection (Radon).

    Linear and differentiable; the vjp is the exact transpose. The Radon
    branch scales by pi/num_angles so the filtered backprojection approximates
    the inverse transform rather than just its adjoint.
    """

    kind = "adjoint"
    differentiable = True
    trainable = False

    def forward(self, p: Measurement) -> Image:
        if self.model.kind == "fourier":
            return self.model.adjoint(p)
        g = self.model.geometry
        filtered = _ramp_filter(p.values.reshape(g.num_angles, g.num_detectors))
        scaled = filtered.ravel() * (np.pi / g.num_angles)
        return self.model.adjoint(Measurement(scaled, kind="radon"))

    def vjp(self, p: Measurement, cotangent: Image) -> Measurement:
        if self.model.kind == "fourier":
            return self.model.apply(cotangent)
        g = self.model.geometry
        proj = self.model.apply(cotangent).values.reshape(g.num_angles, g.num_detectors)
        return Measurement(_ramp_filter(proj).ravel() * (np.pi / g.num_angles), kind="radon")


def build_adjoint_recon(model: ForwardModel) -> ReconOperator:
    return AdjointRecon(model)


# ---------------------------------------------------------------------------
# dense two-layer network

def _input_dim(model: ForwardModel) -> int:
    # fourier measurements enter as interleaved re/im pairs
    return 2 * model.row_count if model.kind == "fourier" else model.row_count


class AutomapMini(ReconOperator):
    """Dense net: image = W2 tanh(W1 x + b1) + b2 on the real measurement view."""

    kind = "automap"
    differentiable = True
    trainable = True

    def __init__(self, model: ForwardModel, w1, b1, w2, b2):
        h, w = model.image_shape
        if h > MAX_DENSE_SIDE or w > MAX_DENSE_SIDE:
            raise CapabilityError(
                f"dense weights limited to {MAX_DENSE_SIDE}x{MAX_DENSE_SIDE} images, got {h}x{w}"
            )
        super().__init__(model)
        self.w1 = np.ascontiguousarray(w1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(b1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(w2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(b2, dtype=np.float64)
        m_in = _input_dim(model)
        n_pix = h * w
        hidden = self.b1.shape[0]
        expect = {
            "w1": (hidden, m_in),
            "b1": (hidden,),
            "w2": (n_pix, hidden),
            "b2": (n_pix,),
        }
        for name, want in expect.items():
            got = getattr(self, name).shape
            if got != want:
                raise ShapeError(f"{name} shape {got}, expected {want}")

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    def forward(self, p: Measurement) -> Image:
        x = p.as_real_vector()
        h = np.tanh(self.w1 @ x + self.b1)
        y = self.w2 @ h + self.b2
        return Image(y.reshape(self.model.image_shape))

    def vjp(self, p: Measurement, cotangent: Image) -> Measurement:
        x = p.as_real_vector()
        h = np.tanh(self.w1 @ x + self.b1)
        gz = (self.w2.T @ cotangent.values.ravel()) * (1.0 - h * h)
        return Measurement.from_real_vector(self.w1.T @ gz, kind=self.model.kind)


def build_automap_mini(model: ForwardModel, hidden: int = 256, seed: int = 0) -> AutomapMini:
    if hidden < 1:
        raise ValidationError(f"hidden must be >= 1, got {hidden}")
    rng = np.random.default_rng(seed)
    m_in = _input_dim(model)
    n_pix = model.image_shape[0] * model.image_shape[1]
    w1 = rng.standard_normal((hidden, m_in)) / np.sqrt(m_in)
    w2 = rng.standard_normal((n_pix, hidden)) / np.sqrt(hidden)
    return AutomapMini(model, w1, np.zeros(hidden), w2, np.zeros(n_pix))


@dataclass(frozen=True)
class TrainLog:
    """Per-epoch training loss and mean measurement-consistency residual."""

    loss: tuple
    data_residual: tuple


def _batch_data_residual(model: ForwardModel, outputs: np.ndarray, x_cols: np.ndarray) -> float:
    """Mean over pairs of ||A phi(p) - p|| / ||p||, all in the real view."""
    n_pairs = outputs.shape[1]
    ratios = np.zeros(n_pairs)
    for i in range(n_pairs):
        f = Image(outputs[:, i].reshape(model.image_shape))
        ap = model.apply(f).as_real_vector()
        den = np.linalg.norm(x_cols[:, i])
        ratios[i] = np.linalg.norm(ap - x_cols[:, i]) / den if den > 0 else 0.0
    return float(np.mean(ratios))


def train_automap_mini(op: ReconOperator, pairs, epochs: int, step: float) -> AutomapMini:
    """Full-batch gradient descent on per-pixel mean squared error.

    Deterministic: no randomness beyond the operator's initialization. The
    returned operator is a new object; the input operator is untouched.
    """
    if not op.trainable:
        raise CapabilityError(f"{type(op).__name__} is not trainable")
    if not pairs:
        raise ValidationError("training needs at least one (measurement, image) pair")
    model = op.model
    for p, f in pairs:
        _check_measurement(model, p)
        if f.shape != model.image_shape:
            raise ShapeError(f"target shape {f.shape} != {model.image_shape}")
    x = np.stack([p.as_real_vector() for p, _ in pairs], axis=1)
    y = np.stack([f.values.ravel() for _, f in pairs], axis=1)
    w1, b1 = op.w1.copy(), op.b1.copy()
    w2, b2 = op.w2.copy(), op.b2.copy()
    n_pix, n_pairs = y.shape
    losses, residuals = [], []
    for epoch in range(epochs + 1):
        hid = np.tanh(w1 @ x + b1[:, None])
        out = w2 @ hid + b2[:, None]
        diff = out - y
        losses.append(float(np.mean(diff * diff)))
        residuals.append(_batch_data_residual(model, out, x))
        if epoch == epochs:
            break
        g_out = diff * (2.0 / (n_pix * n_pairs))
        g_w2 = g_out @ hid.T
        g_b2 = g_out.sum(axis=1)
        g_hid = (w2.T @ g_out) * (1.0 - hid * hid)
        g_w1 = g_hid @ x.T
        g_b1 = g_hid.sum(axis=1)
        w2 -= step * g_w2
        b2 -= step * g_b2
        w1 -= step * g_w1
        b1 -= step * g_b1
    trained = AutomapMini(model, w1, b1, w2, b2)
    trained.train_log = TrainLog(loss=tuple(losses), data_residual=tuple(residuals))
    return trained


# ---------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class BrenReport:
    """Relative error of op(model.apply(f_star)) against f_star."""

    ratio: float
    numerator: float
    denominator: float


def bren_ratio(op: ReconOperator, model: ForwardModel, f_star: Image) -> BrenReport:
    denominator = l2_norm(f_star)
    if denominator == 0.0:
        raise ValidationError("ground truth has zero norm")
    recon = recon_forward(op, model.apply(f_star))
    numerator = float(np.linalg.norm(recon.values - f_star.values))
    return BrenReport(numerator / denominator, numerator, denominator)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Empirical lower bound on the end-to-end Lipschitz constant."""

    lower: float
    samples: int
    perturbation_scale: float


def lipschitz_estimate(
    op: ReconOperator,
    model: ForwardModel,
    probes,
    perturbations_per_probe: int,
    scale: float,
    seed: int,
) -> LipschitzEstimate:
    """Max observed ratio ||phi_A(f + d) - phi_A(f)|| / ||d|| over random d.

    Each probe gets its own seeded stream, so growing perturbations_per_probe
    extends the sample set without disturbing earlier draws.
    """
    if not probes:
        raise ValidationError("need at least one probe image")
    if scale <= 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    best = 0.0
    count = 0
    for i, f in enumerate(probes):
        rng = np.random.default_rng((seed, i))
        base = recon_forward(op, model.apply(f)).values
        for _ in range(perturbations_per_probe):
            d = scale * rng.standard_normal(f.shape)
            shifted = recon_forward(op, model.apply(Image(f.values + d))).values
            ratio = float(np.linalg.norm(shifted - base) / np.linalg.norm(d))
            best = max(best, ratio)
            count += 1
    return LipschitzEstimate(best, count, scale)


# ---------------------------------------------------------------------------
# serialization

_BLOB_MAGIC = "RECOP1"


def save_operator(path, op: ReconOperator) -> None:
    """Write `RECOP1 <kind> <m> <N> <hidden>` plus little-endian f64 weights."""
    if isinstance(op, AutomapMini):
        hidden = op.hidden
        payload = b"".join(
            a.astype("<f8").tobytes() for a in (op.w1, op.b1, op.w2, op.b2)
        )
    elif isinstance(op, AdjointRecon):
        hidden = 0
        payload = b""
    else:
        raise CapabilityError(f"{type(op).__name__} does not serialize")
    header = f"{_BLOB_MAGIC} {op.kind} {op.model.row_count} {op.model.col_count} {hidden}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def load_operator(path, model: ForwardModel) -> ReconOperator:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, payload = blob.partition(b"\n")
    parts = head.decode("ascii", errors="replace").split()
    if len(parts) != 5 or parts[0] != _BLOB_MAGIC:
        raise ValidationError(f"not a {_BLOB_MAGIC} operator blob")
    kind, m, n, hidden = parts[1], int(parts[2]), int(parts[3]), int(parts[4])
    if m != model.row_count or n != model.col_count:
        raise ValidationError(
            f"blob built for {m} samples x {n} pixels, model has "
            f"{model.row_count} x {model.col_count}"
        )
    if kind == "adjoint":
        return AdjointRecon(model)
    if kind != "automap":
        raise ValidationError(f"unknown operator kind {kind!r}")
    m_in = _input_dim(model)
    n_pix = model.image_shape[0] * model.image_shape[1]
    sizes = (hidden * m_in, hidden, n_pix * hidden, n_pix)
    if len(payload) != 8 * sum(sizes):
        raise ValidationError(
            f"payload holds {len(payload)} bytes, expected {8 * sum(sizes)}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    splits = np.cumsum(sizes)[:-1]
    w1, b1, w2, b2 = np.split(flat, splits)
    return AutomapMini(model, w1.reshape(hidden, m_in), b1, w2.reshape(n_pix, hidden), b2)
