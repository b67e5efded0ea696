"""Adversarial probing of reconstruction operators and the stabilized loop.

Perturbations are grown by momentum gradient ascent on a distortion
objective: how far the pipeline output moves, minus a quadratic penalty
gamma on the perturbation energy. Two pipelines are attackable: a single
operator applied to measurements of the perturbed image, and the full
iterative loop. The loop gradient is assembled by walking a recorded
trajectory backwards; every stage contributes through two paths (the
carried estimate and the re-measured residual), and conditioned operator
calls are differentiated through the affine map's endpoints as well, so
the result matches finite differences of the actual objective away from
compression branch boundaries.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import AcidConfig, DivergedError, _csv_float, acid_trajectory
from .grid import Image, Measurement, ShapeError, ValidationError, l2_norm
from .models import ForwardModel
from .operators import CapabilityError, ReconOperator, recon_forward, recon_vjp
from .sparsity import _SHIFTS, ThresholdParams, _padded_neighbors, sparsify


@dataclass(frozen=True)
class AttackConfig:
    """Ascent hyperparameters.

    gamma is the energy penalty weight, step the ascent rate, momentum the
    velocity decay (strictly below one), max_iters the iteration cap and
    norm_budget an optional hard ceiling on the perturbation norm. A step
    that would cross the budget is not taken; the search stops instead.
    """

    gamma: float
    step: float
    momentum: float
    max_iters: int
    norm_budget: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValidationError("gamma must be finite and non-negative")
        if not (np.isfinite(self.step) and self.step > 0.0):
            raise ValidationError("step must be finite and positive")
        if not (np.isfinite(self.momentum) and 0.0 <= self.momentum < 1.0):
            raise ValidationError("momentum must lie in [0, 1)")
        if not (isinstance(self.max_iters, (int, np.integer)) and self.max_iters >= 0):
            raise ValidationError("max_iters must be a non-negative integer")
        if self.norm_budget is not None and not (
            np.isfinite(self.norm_budget) and self.norm_budget > 0.0
        ):
            raise ValidationError("norm_budget must be positive when given")


@dataclass(frozen=True)
class AttackResult:
    """Outcome of one ascent run.

    objective_trace[i] and norm_trace[i] describe the perturbation at the
    start of iteration i. output_distortion is recomputed once at the end
    from the returned perturbation.
    """

    perturbation: Image
    objective_trace: tuple
    norm_trace: tuple
    perturbation_norm: float
    output_distortion: float


class AttackAbortedError(RuntimeError):
    """The ascent left the representable float range before finishing."""

    def __init__(self, iteration: int, objective_trace, detail: str):
        super().__init__(f"attack aborted at iteration {iteration}: {detail}")
        self.iteration = iteration
        self.objective_trace = tuple(objective_trace)


def initial_perturbation(f: Image, seed: int) -> Image:
    """Seeded Gaussian direction scaled to a thousandth of the image norm."""
    scale = l2_norm(f)
    if scale == 0.0:
        raise ValidationError("cannot scale a perturbation against a zero image")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(f.shape)
    return Image(z * (1e-3 * scale / np.linalg.norm(z)))


def sparsify_vjp(f_half: Image, cotangent: Image, epsilon: float) -> Image:
    """Pullback of the compression filter at f_half.

    Mirrors the forward branch structure exactly: a comparison with
    |va - vb| <= epsilon took the neighbor mean, so half the sensitivity
    goes to each side; anything else was a half-threshold clamp whose
    derivative is one in the center and zero in the neighbor. Shares that
    land on a replicated border neighbor fold back onto the border pixel.
    """
    params = ThresholdParams(epsilon)
    if f_half.shape != cotangent.shape:
        raise ShapeError(
            f"cotangent shape {cotangent.shape} does not match image {f_half.shape}"
        )
    v = f_half.values
    c = cotangent.values
    h, w = v.shape
    grad = np.zeros_like(v)
    pad = np.zeros((h + 2, w + 2))
    for (dr, dc), nb in zip(_SHIFTS, _padded_neighbors(v)):
        mean = np.abs(v - nb) <= params.epsilon
        grad += 0.25 * np.where(mean, 0.5, 1.0) * c
        pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] += 0.25 * np.where(mean, 0.5, 0.0) * c
    pad[1, :] += pad[0, :]
    pad[h, :] += pad[h + 1, :]
    pad[:, 1] += pad[:, 0]
    pad[:, w] += pad[:, w + 1]
    return Image(grad + pad[1:h + 1, 1:w + 1])


def _check_frame(model: ForwardModel, f: Image, e, gamma) -> None:
    if f.shape != model.image_shape:
        raise ShapeError(f"image shape {f.shape} does not match model {model.image_shape}")
    if e is not None and e.shape != f.shape:
        raise ShapeError(f"perturbation shape {e.shape} does not match image {f.shape}")
    if gamma is not None and not (np.isfinite(gamma) and gamma >= 0.0):
        raise ValidationError("gamma must be finite and non-negative")


def attack_objective(
    op: ReconOperator, model: ForwardModel, f: Image, e: Image, gamma: float
) -> float:
    """Operator distortion of the perturbed measurements, energy-penalized."""
    _check_frame(model, f, e, gamma)
    clean = recon_forward(op, model.apply(f))
    pert = recon_forward(op, model.apply(Image(f.values + e.values)))
    diff = pert.values - clean.values
    return float(0.5 * np.sum(diff * diff) - 0.5 * gamma * np.sum(e.values * e.values))


def attack_gradient(
    op: ReconOperator, model: ForwardModel, f: Image, e: Image, gamma: float
) -> Image:
    """Gradient of attack_objective with respect to the perturbation."""
    _check_frame(model, f, e, gamma)
    clean = recon_forward(op, model.apply(f))
    u = model.apply(Image(f.values + e.values))
    diff = recon_forward(op, u).values - clean.values
    g = model.adjoint(recon_vjp(op, u, Image(diff)))
    return Image(g.values - gamma * e.values)


def _resolve_pair(config: AcidConfig, pair):
    if pair is not None:
        return pair
    params = ThresholdParams(config.epsilon)

    def fwd(image):
        return sparsify(image, params)

    def bwd(pre, cot):
        return sparsify_vjp(pre, Image(cot), config.epsilon).values

    return fwd, bwd


def _conditioned_vjp(op, raw_input, seen, record, raw_output, cot):
    """Pull an image cotangent through one (possibly conditioned) call.

    Returns the gradient with respect to the call's raw input as a real
    vector, plus the sensitivities to the two shared target endpoints.
    The affine conditioning is differentiated in full: through the input
    values, the recorded input extremes, and the target range.
    """
    gain = record._gain() if record is not None else None
    if gain is None:
        q = recon_vjp(op, seen, Image(cot))
        return q.as_real_vector(), 0.0, 0.0
    x = raw_input.as_real_vector()
    a, b = record.input_min, record.input_max
    lo = record.target_lo
    s_in = record.input_max - record.input_min
    s_out = record.target_hi - record.target_lo
    raw = raw_output.values
    q = recon_vjp(op, seen, Image(cot / gain)).as_real_vector()
    qs = float(q.sum())
    cs = float(cot.sum())
    x_a = float(np.dot(q, x)) - a * qs
    x_b = float(np.dot(q, x)) - b * qs
    r = float(np.sum(cot * raw)) - lo * cs
    g_x = gain * q
    g_x[int(np.argmin(x))] += s_out * x_b / s_in**2 + cs - r / s_out
    g_x[int(np.argmax(x))] += -s_out * x_a / s_in**2 + r / s_out
    g_lo = qs - x_a / s_in - cs * s_in / s_out + r * s_in / s_out**2
    g_hi = x_a / s_in - r * s_in / s_out**2
    return g_x, g_lo, g_hi


def _acid_pullback(op, model, config, traj, loss_grad, bwd):
    """Walk a recorded trajectory backwards, accumulating d(loss)/d(p0).

    Each stage splits the estimate cotangent into a carried branch and a
    re-measured branch; target endpoint sensitivities from conditioned
    calls land on the extremes of the initial measurement. The adjoint of
    the forward model is applied once at the end.
    """
    w_res, w_phi = config.residual_weight, config.prior_weight
    kind = model.kind
    x0 = traj.phi_inputs[0].as_real_vector()
    g_x0 = np.zeros_like(x0)
    i_lo, i_hi = int(np.argmin(x0)), int(np.argmax(x0))
    g_f = loss_grad
    for k in range(len(traj.images) - 1, 0, -1):
        g_pre = bwd(traj.pre_sparsify[k], g_f)
        g_x, g_lo, g_hi = _conditioned_vjp(
            op,
            traj.phi_inputs[k],
            traj.normalized_inputs[k],
            traj.norm_records[k],
            traj.raw_outputs[k],
            w_phi * g_pre,
        )
        g_x0[i_lo] += g_lo
        g_x0[i_hi] += g_hi
        g_x0 += w_res * g_x
        back = model.adjoint(Measurement.from_real_vector(g_x, kind))
        g_f = g_pre - w_res * back.values
    g_pre = bwd(traj.pre_sparsify[0], g_f)
    g_x, g_lo, g_hi = _conditioned_vjp(
        op,
        traj.phi_inputs[0],
        traj.normalized_inputs[0],
        traj.norm_records[0],
        traj.raw_outputs[0],
        g_pre,
    )
    g_x0[i_lo] += g_lo
    g_x0[i_hi] += g_hi
    g_x0 += g_x
    return model.adjoint(Measurement.from_real_vector(g_x0, kind)).values


def acid_attack_objective(
    op: ReconOperator,
    model: ForwardModel,
    f: Image,
    e: Image,
    acid_config: AcidConfig,
    gamma: float,
    *,
    reference: Image | None = None,
    _sparsify_pair=None,
) -> float:
    """Distortion of the loop output under a perturbed input, penalized.

    reference is the clean loop output; it is recomputed when not given.
    """
    _check_frame(model, f, e, gamma)
    fwd, _ = _resolve_pair(acid_config, _sparsify_pair)
    if reference is None:
        reference = acid_trajectory(
            model.apply(f), model, op, acid_config, _sparsifier=fwd
        ).images[-1]
    hit = acid_trajectory(
        model.apply(Image(f.values + e.values)), model, op, acid_config, _sparsifier=fwd
    ).images[-1]
    diff = hit.values - reference.values
    return float(0.5 * np.sum(diff * diff) - 0.5 * gamma * np.sum(e.values * e.values))


def acid_attack_gradient(
    op: ReconOperator,
    model: ForwardModel,
    f: Image,
    e: Image,
    acid_config: AcidConfig,
    gamma: float,
    *,
    reference: Image | None = None,
    _sparsify_pair=None,
) -> Image:
    """Gradient of acid_attack_objective with respect to the perturbation."""
    _check_frame(model, f, e, gamma)
    if not op.differentiable:
        raise CapabilityError(f"{type(op).__name__} is not differentiable")
    fwd, bwd = _resolve_pair(acid_config, _sparsify_pair)
    if reference is None:
        reference = acid_trajectory(
            model.apply(f), model, op, acid_config, _sparsifier=fwd
        ).images[-1]
    traj = acid_trajectory(
        model.apply(Image(f.values + e.values)), model, op, acid_config, _sparsifier=fwd
    )
    loss_grad = traj.images[-1].values - reference.values
    total = _acid_pullback(op, model, acid_config, traj, loss_grad, bwd)
    return Image(total - gamma * e.values)


def _ascend(f: Image, config: AttackConfig, seed: int, evaluate):
    """Shared momentum loop; evaluate returns (objective, gradient array)."""
    e = initial_perturbation(f, seed).values
    if config.max_iters == 0:
        return e, (), ()
    v = np.zeros_like(e)
    trace, norms = [], []
    for i in range(config.max_iters):
        try:
            # overflow is expected near divergence and handled right below
            with np.errstate(over="ignore", invalid="ignore"):
                objective, grad = evaluate(e)
        except (DivergedError, ValidationError) as err:
            raise AttackAbortedError(i, trace, str(err)) from err
        if not (np.isfinite(objective) and np.all(np.isfinite(grad))):
            raise AttackAbortedError(i, trace, "objective or gradient left the float range")
        trace.append(float(objective))
        norms.append(float(np.linalg.norm(e)))
        v = config.momentum * v + config.step * grad
        stepped = e + v
        if not np.all(np.isfinite(stepped)):
            raise AttackAbortedError(i, trace, "perturbation left the float range")
        if config.norm_budget is not None and float(np.linalg.norm(stepped)) > config.norm_budget:
            break
        e = stepped
    return e, tuple(trace), tuple(norms)


def attack_network(
    op: ReconOperator, model: ForwardModel, f: Image, config: AttackConfig, seed: int
) -> AttackResult:
    """Grow a perturbation against a single reconstruction operator."""
    _check_frame(model, f, None, None)
    if not op.differentiable:
        raise CapabilityError(f"{type(op).__name__} is not differentiable")
    clean = recon_forward(op, model.apply(f)).values

    def evaluate(e_values):
        u = model.apply(Image(f.values + e_values))
        diff = recon_forward(op, u).values - clean
        objective = float(
            0.5 * np.sum(diff * diff) - 0.5 * config.gamma * np.sum(e_values * e_values)
        )
        grad = model.adjoint(recon_vjp(op, u, Image(diff))).values - config.gamma * e_values
        return objective, grad

    e, trace, norms = _ascend(f, config, seed, evaluate)
    pert = recon_forward(op, model.apply(Image(f.values + e))).values
    return AttackResult(
        perturbation=Image(e),
        objective_trace=trace,
        norm_trace=norms,
        perturbation_norm=float(np.linalg.norm(e)),
        output_distortion=float(np.linalg.norm(pert - clean)),
    )


def attack_acid(
    op: ReconOperator,
    model: ForwardModel,
    f: Image,
    acid_config: AcidConfig,
    config: AttackConfig,
    seed: int,
) -> AttackResult:
    """Grow a perturbation against the full iterative loop."""
    _check_frame(model, f, None, None)
    if not op.differentiable:
        raise CapabilityError(f"{type(op).__name__} is not differentiable")
    fwd, bwd = _resolve_pair(acid_config, None)
    reference = acid_trajectory(
        model.apply(f), model, op, acid_config, _sparsifier=fwd
    ).images[-1]

    def evaluate(e_values):
        traj = acid_trajectory(
            model.apply(Image(f.values + e_values)), model, op, acid_config, _sparsifier=fwd
        )
        diff = traj.images[-1].values - reference.values
        objective = float(
            0.5 * np.sum(diff * diff) - 0.5 * config.gamma * np.sum(e_values * e_values)
        )
        grad = _acid_pullback(op, model, acid_config, traj, diff, bwd)
        return objective, grad - config.gamma * e_values

    e, trace, norms = _ascend(f, config, seed, evaluate)
    hit = acid_trajectory(
        model.apply(Image(f.values + e)), model, op, acid_config, _sparsifier=fwd
    ).images[-1]
    return AttackResult(
        perturbation=Image(e),
        objective_trace=trace,
        norm_trace=norms,
        perturbation_norm=float(np.linalg.norm(e)),
        output_distortion=float(np.linalg.norm(hit.values - reference.values)),
    )


def write_attack_trace(path, result: AttackResult) -> None:
    """Write the ascent trace as a deterministic ascii csv."""
    lines = ["iter,objective,norm"]
    for i, (objective, norm) in enumerate(
        zip(result.objective_trace, result.norm_trace), start=1
    ):
        lines.append(f"{i},{_csv_float(objective)},{_csv_float(norm)}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))
