"""Stabilized meta-iteration driving a reconstruction operator.

The loop interleaves three ingredients: the forward model A, a learned or
analytic reconstruction operator applied to the current data residual, and a
compressive projection (sparsify) applied to every intermediate estimate.
With update weights derived from the coupling constants lambda and mu,

    f(0)   = sparsify(Phi(p0))
    p(k+1) = lambda / (1 + lambda + mu) * (p0 - A f(k))
    f(k+1) = sparsify(f(k) + (1 + mu) / lambda * Phi(p(k+1)))

Everything here is deterministic: two runs from the same inputs produce
bit-identical histories, which is what makes the manifest replay story work.

`acid_run` executes the loop and collects per-iteration diagnostics;
`acid_trajectory` executes the same recursion but records every intermediate
array so a caller can replay the computation (the adversarial machinery
differentiates through one of these records). Ablation variants, the
synthetic contraction probe, and the sampling-rate sweep all reduce to
`acid_run` with substituted pieces.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .grid import Image, Measurement, ValidationError, l2_norm, psnr, ssim, write_f64grid
from .models import ForwardModel, fourier_model, make_mask, radon_model, select_views
from .operators import ReconOperator, build_adjoint_recon, recon_forward
from .sparsity import ThresholdParams, sparsify

# residual growth beyond this multiple of the input norm is declared divergence
_BLOWUP_FACTOR = 1e12


@dataclass(frozen=True)
class AcidConfig:
    """Coupling constants and loop bounds for one reconstruction run.

    lambda_ trades data fidelity against the operator prior (the trailing
    underscore only dodges the Python keyword). epsilon is the compression
    threshold. mu adds extra damping and defaults to zero, which collapses
    the update weights to lambda/(1+lambda) and 1/lambda. normalize rescales
    each operator input into the value range of p0 before the call and
    applies the exact inverse map to the output, for operators trained at a
    fixed input scale.
    """

    lambda_: float
    epsilon: float
    iterations: int
    normalize: bool = False
    mu: float = 0.0

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise ValidationError(f"lambda_ must be positive, got {self.lambda_}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.mu < 0:
            raise ValidationError(f"mu must be >= 0, got {self.mu}")

    @property
    def residual_weight(self) -> float:
        """Scale applied to the data residual before the operator sees it."""
        return self.lambda_ / (1.0 + self.lambda_ + self.mu)

    @property
    def prior_weight(self) -> float:
        """Scale applied to the operator output in the estimate update."""
        return (1.0 + self.mu) / self.lambda_


@dataclass(frozen=True)
class AcidHistory:
    """Per-iteration diagnostics; entry i belongs to iteration i+1.

    psnrs/ssims stay empty when no ground truth was supplied,
    observable_errors and lipschitz_ratios when their tracking was off.
    """

    residual_norms: tuple
    psnrs: tuple = ()
    ssims: tuple = ()
    observable_errors: tuple = ()
    lipschitz_ratios: tuple = ()
    snapshots: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.residual_norms)


@dataclass(frozen=True)
class AcidTrajectory:
    """Complete record of one run: every operator call and every estimate.

    Index 0 is the seeding call on p0 itself; index k >= 1 is iteration k.
    phi_inputs holds the raw measurements handed to the loop, normalized_inputs
    what the operator actually saw (identical objects when normalization is
    off), phi_outputs the operator images after undoing the normalization,
    pre_sparsify the estimates just before compression, and images the
    estimates f(0)..f(K). residual_norms[k] is ||p0 - A f(k)||.
    """

    phi_inputs: tuple
    normalized_inputs: tuple
    norm_records: tuple
    phi_outputs: tuple
    raw_outputs: tuple
    pre_sparsify: tuple
    images: tuple
    residual_norms: tuple

    @property
    def pre_update_residuals(self) -> tuple:
        """Residual norms as seen when forming each p(k+1), k >= 1."""
        return self.residual_norms[:-1]


class DivergedError(RuntimeError):
    """The iteration left the numerically representable regime."""

    def __init__(self, iteration: int, detail: str):
        super().__init__(f"diverged at iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map sending [input_min, input_max] onto [target_lo, target_hi].

    Degenerate ranges (flat input or flat target) turn the map into the
    identity so a constant vector passes through unchanged, and so do span
    ratios that leave the normal float range, where the affine map would
    lose its invertibility to overflow. normalize and denormalize are
    exact inverses up to roundoff.
    """

    input_min: float
    input_max: float
    target_lo: float
    target_hi: float

    def _gain(self):
        in_span = self.input_max - self.input_min
        out_span = self.target_hi - self.target_lo
        if in_span == 0.0 or out_span == 0.0:
            return None
        with np.errstate(over="ignore"):
            g = out_span / in_span
        # subnormal or infinite gain: 1/g is not trustworthy
        if not np.isfinite(g) or abs(g) < np.finfo(np.float64).tiny:
            return None
        return g

    def normalize(self, x: np.ndarray) -> np.ndarray:
        g = self._gain()
        if g is None:
            return np.asarray(x, dtype=np.float64).copy()
        return self.target_lo + (np.asarray(x, dtype=np.float64) - self.input_min) * g

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        g = self._gain()
        if g is None:
            return np.asarray(y, dtype=np.float64).copy()
        return self.input_min + (np.asarray(y, dtype=np.float64) - self.target_lo) / g


def _norm_target(p0: Measurement, config: AcidConfig):
    if not config.normalize:
        return None
    x = p0.as_real_vector()
    return float(x.min()), float(x.max())


def _phi_call(op: ReconOperator, p: Measurement, norm_target):
    """One operator application, optionally conditioned on the p0 value range.

    Returns (output image, input the operator saw, normalization record,
    raw operator output before the inverse map). Differentiation of the
    conditioned call goes through the record's endpoints as well; the
    adversarial module owns that chain.
    """
    if norm_target is None:
        out = recon_forward(op, p)
        return out, p, None, out
    x = p.as_real_vector()
    rec = NormalizationRecord(float(x.min()), float(x.max()), *norm_target)
    seen = Measurement.from_real_vector(rec.normalize(x), p.kind)
    raw = recon_forward(op, seen)
    return Image(rec.denormalize(raw.values)), seen, rec, raw


def _check_inputs(p0: Measurement, model: ForwardModel, ground_truth):
    if p0.kind != model.kind:
        raise ValidationError(
            f"measurement kind {p0.kind!r} does not match model kind {model.kind!r}"
        )
    if p0.length != model.row_count:
        raise ValidationError(
            f"measurement length {p0.length} does not match model rows {model.row_count}"
        )
    if ground_truth is not None and ground_truth.shape != model.image_shape:
        raise ValidationError(
            f"ground truth shape {ground_truth.shape} does not match model {model.image_shape}"
        )


def _default_sparsifier(config: AcidConfig):
    params = ThresholdParams(config.epsilon)
    return lambda image: sparsify(image, params)


def _residual(p0: Measurement, model: ForwardModel, f: Image):
    r_values = p0.values - model.apply(f).values
    return r_values, float(np.linalg.norm(r_values))


def acid_run(
    p0: Measurement,
    model: ForwardModel,
    op: ReconOperator,
    config: AcidConfig,
    ground_truth: Image | None = None,
    *,
    snapshot_every: int = 0,
    track_lipschitz: bool = False,
    track_observable: bool = False,
    stop_below: float | None = None,
    peak: float = 1.0,
    _sparsifier=None,
) -> tuple[Image, AcidHistory]:
    """Run the meta-iteration and return the final estimate with diagnostics.

    Each iteration costs one forward-model application and one operator
    call. With a ground truth the history carries psnr/ssim per iteration
    (computed against `peak`); track_observable additionally records the
    norm of the error component visible to the forward model, and
    track_lipschitz the output/input difference ratio of consecutive
    operator calls. snapshot_every=n keeps a copy of every n-th estimate.
    stop_below ends the loop early once the residual norm falls under it.
    Raises DivergedError when an estimate stops being representable or the
    residual outgrows the input by _BLOWUP_FACTOR.
    """
    _check_inputs(p0, model, ground_truth)
    sparsifier = _sparsifier if _sparsifier is not None else _default_sparsifier(config)
    norm_target = _norm_target(p0, config)
    blowup = _BLOWUP_FACTOR * max(l2_norm(p0), 1.0)

    residual_norms, psnrs, ssims = [], [], []
    observable_errors, lipschitz_ratios = [], []
    snapshots = {}

    out, _, _, _ = _phi_call(op, p0, norm_target)
    f = sparsifier(out)
    r_values, r_norm = _residual(p0, model, f)
    prev_in, prev_out = p0, out

    for k in range(1, config.iterations + 1):
        p_k = Measurement(config.residual_weight * r_values, kind=p0.kind)
        out, _, _, _ = _phi_call(op, p_k, norm_target)
        half = f.values + config.prior_weight * out.values
        if not np.all(np.isfinite(half)):
            raise DivergedError(k, "estimate contains non-finite values")
        f = sparsifier(Image(half))
        r_values, r_norm = _residual(p0, model, f)
        if not np.isfinite(r_norm) or r_norm > blowup:
            raise DivergedError(k, f"residual norm {r_norm!r} exceeded guard {blowup!r}")

        residual_norms.append(r_norm)
        if ground_truth is not None:
            psnrs.append(psnr(ground_truth, f, peak))
            ssims.append(ssim(ground_truth, f, peak))
            if track_observable:
                err = Image(f.values - ground_truth.values)
                observable_errors.append(l2_norm(observable_projection(model, err)))
        if track_lipschitz:
            din = np.linalg.norm(p_k.values - prev_in.values)
            dout = np.linalg.norm(out.values - prev_out.values)
            lipschitz_ratios.append(float(dout / din) if din > 0 else 0.0)
            prev_in, prev_out = p_k, out
        if snapshot_every > 0 and k % snapshot_every == 0:
            snapshots[k] = f
        if stop_below is not None and r_norm < stop_below:
            break

    return f, AcidHistory(
        residual_norms=tuple(residual_norms),
        psnrs=tuple(psnrs),
        ssims=tuple(ssims),
        observable_errors=tuple(observable_errors),
        lipschitz_ratios=tuple(lipschitz_ratios),
        snapshots=snapshots,
    )


def acid_trajectory(
    p0: Measurement,
    model: ForwardModel,
    op: ReconOperator,
    config: AcidConfig,
    *,
    _sparsifier=None,
) -> AcidTrajectory:
    """Run the same recursion as acid_run but keep every intermediate array.

    The record is what reverse-mode differentiation walks backwards: it
    holds the operator inputs (for vjp calls), the pre-compression estimates
    (for the sparsifier's branch pattern), and the normalization constants.
    """
    _check_inputs(p0, model, None)
    sparsifier = _sparsifier if _sparsifier is not None else _default_sparsifier(config)
    norm_target = _norm_target(p0, config)
    blowup = _BLOWUP_FACTOR * max(l2_norm(p0), 1.0)

    phi_inputs, seen_inputs, records = [], [], []
    phi_outputs, raw_outputs, pre_sparsify, images, residual_norms = [], [], [], [], []

    def call(p):
        out, seen, rec, raw = _phi_call(op, p, norm_target)
        phi_inputs.append(p)
        seen_inputs.append(seen)
        records.append(rec)
        phi_outputs.append(out)
        raw_outputs.append(raw)
        return out

    out = call(p0)
    pre_sparsify.append(out)
    f = sparsifier(out)
    images.append(f)
    r_values, r_norm = _residual(p0, model, f)
    residual_norms.append(r_norm)

    for k in range(1, config.iterations + 1):
        p_k = Measurement(config.residual_weight * r_values, kind=p0.kind)
        out = call(p_k)
        half = f.values + config.prior_weight * out.values
        if not np.all(np.isfinite(half)):
            raise DivergedError(k, "estimate contains non-finite values")
        pre = Image(half)
        pre_sparsify.append(pre)
        f = sparsifier(pre)
        images.append(f)
        r_values, r_norm = _residual(p0, model, f)
        residual_norms.append(r_norm)
        if not np.isfinite(r_norm) or r_norm > blowup:
            raise DivergedError(k, f"residual norm {r_norm!r} exceeded guard {blowup!r}")

    return AcidTrajectory(
        phi_inputs=tuple(phi_inputs),
        normalized_inputs=tuple(seen_inputs),
        norm_records=tuple(records),
        phi_outputs=tuple(phi_outputs),
        raw_outputs=tuple(raw_outputs),
        pre_sparsify=tuple(pre_sparsify),
        images=tuple(images),
        residual_norms=tuple(residual_norms),
    )


_ABLATION_VARIANTS = ("NI", "NDL", "NCS")


def acid_ablate(
    variant: str,
    p0: Measurement,
    model: ForwardModel,
    op: ReconOperator,
    config: AcidConfig,
    ground_truth: Image | None = None,
    **kwargs,
) -> tuple[Image, AcidHistory]:
    """Run one of the three single-ingredient ablations.

    NI stops after one iteration (no iteration), NDL swaps the operator for
    the plain analytic reconstruction (no deep learning), NCS disables the
    compressive projection (no compressed sensing). Everything else is
    passed through to acid_run unchanged.
    """
    if variant == "NI":
        cfg = dataclasses.replace(config, iterations=1)
        return acid_run(p0, model, op, cfg, ground_truth, **kwargs)
    if variant == "NDL":
        return acid_run(p0, model, build_adjoint_recon(model), config, ground_truth, **kwargs)
    if variant == "NCS":
        return acid_run(
            p0, model, op, config, ground_truth, _sparsifier=lambda image: image, **kwargs
        )
    raise ValidationError(f"unknown ablation variant {variant!r}, expected one of {_ABLATION_VARIANTS}")


def _range_solve(model: ForwardModel, rhs: np.ndarray) -> np.ndarray:
    """Solve (A A^T + delta I) y = rhs on the measurement real view.

    Only valid for rhs in the range of the model (true for every caller
    here: both feed it A applied to something); a component in the
    cokernel would be amplified by 1/delta instead of solved.
    """
    dim = rhs.shape[0]
    delta = 1e-10

    def matvec(y):
        m = Measurement.from_real_vector(y, model.kind)
        return model.apply(model.adjoint(m)).as_real_vector() + delta * y

    gram = LinearOperator((dim, dim), matvec=matvec, dtype=np.float64)
    y, info = cg(gram, rhs, rtol=1e-12, atol=0.0, maxiter=10 * dim)
    if info != 0:
        raise RuntimeError(f"normal-equation solve did not converge (cg status {info})")
    return y


def _pinv_apply(model: ForwardModel, p: Measurement) -> Image:
    """Pseudo-inverse reconstruction A^+ p for p in the model's range."""
    y = _range_solve(model, p.as_real_vector())
    return model.adjoint(Measurement.from_real_vector(y, model.kind))


def observable_projection(model: ForwardModel, e: Image) -> Image:
    """Project an image onto the subspace the forward model can see.

    Computes A^+ A e through a conjugate-gradient solve of the regularized
    normal equations (delta = 1e-10), which is the orthogonal projection
    onto the span of the model's rows even when the real view of those rows
    is linearly dependent (a sampled frequency and its mirror share one).
    """
    if e.shape != model.image_shape:
        raise ValidationError(f"image shape {e.shape} does not match model {model.image_shape}")
    y = _range_solve(model, model.apply(e).as_real_vector())
    return model.adjoint(Measurement.from_real_vector(y, model.kind))


def contraction_probe(
    sigma: float, model: ForwardModel, f_star: Image, config: AcidConfig
) -> AcidHistory:
    """Measure the decay of the observable error under a synthetic operator.

    The probe operator reconstructs a known fraction of the pseudo-inverse
    answer and leaks the rest into the model's null space at a fixed angle
    (pi/6), so the observable error must contract geometrically with a rate
    controlled by sigma and the update weights. Runs noise-free from
    p0 = A f_star with ground truth attached; the returned history's
    observable_errors are the quantity to fit.
    """
    if not 0.0 < sigma <= 1.0:
        raise ValidationError(f"sigma must lie in (0, 1], got {sigma}")
    if l2_norm(f_star) == 0.0:
        raise ValidationError("ground truth must be nonzero")
    _check_inputs(model.apply(f_star), model, f_star)

    # fixed direction in the null space; seeded so probes are reproducible
    rng = np.random.default_rng(2025)
    z = rng.standard_normal(model.image_shape)
    null_values = z - observable_projection(model, Image(z)).values
    null_norm = np.linalg.norm(null_values)
    if null_norm > 1e-9 * np.linalg.norm(z):
        null_dir = Image(null_values / null_norm)
    else:
        null_dir = None  # fully observable model, nothing to leak into

    probe = _ContractionOperator(model, sigma, null_dir)
    p0 = model.apply(f_star)
    _, history = acid_run(
        p0, model, probe, config, ground_truth=f_star, track_observable=True
    )
    return history


class _ContractionOperator(ReconOperator):
    """sigma-controlled mixture of the pseudo-inverse and a null direction.

    At sigma = 1 this is exactly the pseudo-inverse reconstruction; below
    that it recovers a cos-weighted fraction of the observable answer and
    leaks a sin-weighted fraction into a fixed null-space direction, the
    two weights parameterized by a pi/6 misalignment angle.
    """

    kind = "contraction-probe"
    differentiable = False

    def __init__(self, model: ForwardModel, sigma: float, null_dir: Image | None):
        super().__init__(model)
        angle = np.pi / 6.0
        self.gain = 1.0 - (1.0 - sigma) * np.cos(angle)
        self.leak = (1.0 - sigma) * np.sin(angle)
        self.null_dir = null_dir

    def forward(self, p: Measurement) -> Image:
        base = _pinv_apply(self.model, p)
        values = self.gain * base.values
        if self.null_dir is not None:
            values = values + self.leak * l2_norm(base) * self.null_dir.values
        return Image(values)


def fit_geometric_rate(values) -> tuple[float, float]:
    """Least-squares fit of values[k] ~ c * rho**k; returns (c, rho).

    Nonpositive entries (numerical floor, exact zeros) are dropped before
    taking logs. Needs at least two usable points.
    """
    v = np.asarray(values, dtype=np.float64)
    k = np.arange(v.size, dtype=np.float64)
    keep = v > 0
    if int(keep.sum()) < 2:
        raise ValidationError("rate fit needs at least two positive values")
    slope, intercept = np.polyfit(k[keep], np.log(v[keep]), 1)
    return float(np.exp(intercept)), float(np.exp(slope))


@dataclass(frozen=True)
class SweepRow:
    """Reconstruction quality at one sampling rate."""

    rate: float
    psnr: float
    ssim: float


def data_sweep(
    rates,
    kind: str,
    f_star: Image,
    config: AcidConfig,
    *,
    mask_pattern: str = "gaussian2d",
    mask_seed: int = 7,
    full_angles: int = 180,
    op_factory=None,
    peak: float = 1.0,
) -> list:
    """Reconstruct f_star at each sampling rate and report final psnr/ssim.

    For kind "fourier" the rates are mask fractions in (0, 1]; for "radon"
    they are view counts. Rates must be strictly increasing. op_factory maps
    a forward model to the operator for that rate and defaults to the plain
    adjoint reconstruction, so sweeps are self-contained; pass a factory
    that trains or loads a network to sweep a learned operator.
    """
    rates = list(rates)
    if not rates:
        raise ValidationError("sweep needs at least one rate")
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValidationError("sweep rates must be strictly increasing")
    if kind not in ("fourier", "radon"):
        raise ValidationError(f"unknown sweep kind {kind!r}")
    if op_factory is None:
        op_factory = build_adjoint_recon

    side = f_star.shape[0]
    rows = []
    for rate in rates:
        if kind == "fourier":
            model = fourier_model(make_mask(mask_pattern, float(rate), side, mask_seed))
        else:
            model = radon_model(select_views(full_angles, int(rate), side))
        op = op_factory(model)
        p0 = model.apply(f_star)
        _, history = acid_run(p0, model, op, config, ground_truth=f_star, peak=peak)
        rows.append(SweepRow(rate=rate, psnr=history.psnrs[-1], ssim=history.ssims[-1]))
    return rows


def _csv_float(x: float) -> str:
    return repr(float(x))


def write_history_csv(path, history: AcidHistory) -> None:
    """Write one row per iteration: iter,residual_norm,psnr,ssim.

    Metric columns are left empty when the run had no ground truth. Floats
    are written with repr so a rerun of the same history is byte-identical.
    """
    lines = ["iter,residual_norm,psnr,ssim"]
    for i in range(history.iterations):
        p = _csv_float(history.psnrs[i]) if history.psnrs else ""
        s = _csv_float(history.ssims[i]) if history.ssims else ""
        lines.append(f"{i + 1},{_csv_float(history.residual_norms[i])},{p},{s}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))


def write_history_snapshots(directory, history: AcidHistory) -> list:
    """Dump every stored snapshot as iter_<k>.f64 under directory."""
    from pathlib import Path

    directory = Path(directory)
    paths = []
    for k in sorted(history.snapshots):
        target = directory / f"iter_{k}.f64"
        write_f64grid(target, history.snapshots[k])
        paths.append(target)
    return paths
