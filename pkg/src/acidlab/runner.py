"""Experiment runner: flat-text configs in, seeded artifacts out.

A config is plain `key = value` text: `#` starts a comment, blank lines are
skipped, and a key may repeat only where that is meaningful (`ellipse`).
run_experiment parses one, executes the named protocol into an output
directory, and writes a manifest listing every artifact plus the fully
resolved configuration, so rerunning from the manifest alone reproduces
every CSV byte for byte.

Protocols: reconstruct, ablate, sweep, attack-net, attack-acid, contraction,
noise-stability. All numeric CSV cells are written with repr, which is what
makes the byte-identical rerun guarantee hold.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass

import numpy as np

from acidlab.attacks import AttackConfig, attack_acid, attack_network, write_attack_trace
from acidlab.engine import (
    AcidConfig,
    acid_ablate,
    acid_run,
    contraction_probe,
    data_sweep,
    fit_geometric_rate,
    write_history_csv,
)
from acidlab.grid import (
    Image,
    ValidationError,
    l2_norm,
    psnr,
    ssim,
    write_f64grid,
    write_pgm,
)
from acidlab.models import fourier_model, make_mask, radon_model, select_views
from acidlab.operators import build_adjoint_recon, load_operator, recon_forward
from acidlab.phantoms import (
    Ellipse,
    EllipsePhantomSpec,
    StructuralInsert,
    add_noise,
    insert_structure,
    make_phantom,
    text_glyph,
)

PROTOCOLS = (
    "reconstruct",
    "ablate",
    "sweep",
    "attack-net",
    "attack-acid",
    "contraction",
    "noise-stability",
)

# every key a config may set; anything else is a spelling mistake
KNOWN_KEYS = frozenset(
    {
        "protocol",
        "seed",
        "model",
        "side",
        "mask_pattern",
        "mask_rate",
        "mask_seed",
        "views",
        "full_angles",
        "phantom_count",
        "phantom_seed",
        "peak_normalize",
        "ellipse",
        "insert_text",
        "insert_row",
        "insert_col",
        "insert_intensity",
        "operator",
        "operator_blob",
        "lambda",
        "mu",
        "epsilon",
        "iterations",
        "normalize",
        "noise_sigma",
        "noise_seed",
        "rates",
        "gamma",
        "attack_step",
        "attack_momentum",
        "attack_iters",
        "attack_budget",
        "attack_budget_fraction",
        "attack_seed",
        "contraction_sigmas",
        "stability_draws",
    }
)

_KEY_RE = re.compile(r"^[a-z][a-z0-9_-]*$")


class ConfigError(ValueError):
    """Anything wrong with a config file; maps to CLI exit code 2."""


class ConfigParseError(ConfigError):
    """Malformed config text, located by line and column (both 1-based)."""

    def __init__(self, line: int, column: int, detail: str):
        super().__init__(f"line {line}, column {column}: {detail}")
        self.line = line
        self.column = column


class ConfigKeyError(ConfigError):
    """A syntactically fine config with a bad key or value."""

    def __init__(self, key: str, detail: str):
        super().__init__(f"{key}: {detail}")
        self.key = key


def parse_config(text: str) -> dict:
    """Flat key-value text to {key: [values in file order]}."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise ConfigParseError(lineno, col, "expected `key = value`")
        key, value = line.split("=", 1)
        stripped = key.strip()
        if not _KEY_RE.match(stripped):
            col = len(key) - len(key.lstrip()) + 1
            raise ConfigParseError(lineno, col, f"bad key {stripped!r}")
        out.setdefault(stripped, []).append(value.strip())
    return out


class ConfigView:
    """Typed access to a parsed config that remembers what it handed out.

    The record of consumed keys (with their resolved values) is what the
    manifest serializes, so a manifest replays with identical defaults even
    if the package's defaults change later.
    """

    def __init__(self, raw: dict):
        for key in raw:
            if key not in KNOWN_KEYS:
                raise ConfigKeyError(key, "unknown key")
        self.raw = raw
        self.consumed: dict = {}

    def _single(self, key: str, default):
        values = self.raw.get(key)
        if values is None:
            return default
        if len(values) > 1:
            raise ConfigKeyError(key, "given more than once")
        return values[0]

    def get_str(self, key: str, default: str, choices=None) -> str:
        value = self._single(key, default)
        if choices is not None and value not in choices:
            raise ConfigKeyError(key, f"must be one of {sorted(choices)}, got {value!r}")
        self.consumed[key] = value
        return value

    def get_int(self, key: str, default: int, minimum=None) -> int:
        value = self._single(key, None)
        if value is None:
            result = default
        else:
            try:
                result = int(value)
            except ValueError:
                raise ConfigKeyError(key, f"expected an integer, got {value!r}") from None
        if minimum is not None and result < minimum:
            raise ConfigKeyError(key, f"must be >= {minimum}, got {result}")
        self.consumed[key] = str(result)
        return result

    def get_float(self, key: str, default: float, minimum=None, exclusive=False) -> float:
        value = self._single(key, None)
        if value is None:
            result = float(default)
        else:
            try:
                result = float(value)
            except ValueError:
                raise ConfigKeyError(key, f"expected a number, got {value!r}") from None
        if not np.isfinite(result):
            raise ConfigKeyError(key, "must be finite")
        if minimum is not None:
            if exclusive and not result > minimum:
                raise ConfigKeyError(key, f"must be > {minimum}, got {result}")
            if not exclusive and not result >= minimum:
                raise ConfigKeyError(key, f"must be >= {minimum}, got {result}")
        self.consumed[key] = repr(result)
        return result

    def get_bool(self, key: str, default: bool) -> bool:
        value = self._single(key, None)
        if value is None:
            result = default
        elif value in ("true", "yes", "1"):
            result = True
        elif value in ("false", "no", "0"):
            result = False
        else:
            raise ConfigKeyError(key, f"expected true or false, got {value!r}")
        self.consumed[key] = "true" if result else "false"
        return result

    def get_floats(self, key: str, default) -> list:
        value = self._single(key, None)
        if value is None:
            result = [float(x) for x in default]
        else:
            try:
                result = [float(x) for x in value.split()]
            except ValueError:
                raise ConfigKeyError(key, f"expected numbers, got {value!r}") from None
            if not result:
                raise ConfigKeyError(key, "expected at least one number")
        self.consumed[key] = " ".join(repr(x) for x in result)
        return result

    def get_ellipses(self):
        lines = self.raw.get("ellipse")
        if lines is None:
            return None
        ellipses = []
        for text in lines:
            parts = text.split()
            if len(parts) != 6:
                raise ConfigKeyError(
                    "ellipse", f"expected `cx cy ax ay rotation intensity`, got {text!r}"
                )
            try:
                cx, cy, ax, ay, rot, intensity = (float(x) for x in parts)
            except ValueError:
                raise ConfigKeyError("ellipse", f"expected numbers, got {text!r}") from None
            try:
                ellipses.append(
                    Ellipse(center=(cx, cy), axes=(ax, ay), rotation=rot, intensity=intensity)
                )
            except ValidationError as err:
                raise ConfigKeyError("ellipse", str(err)) from None
        self.consumed["ellipse"] = [
            " ".join(repr(v) for v in (e.center[0], e.center[1], e.axes[0], e.axes[1],
                                       e.rotation, e.intensity))
            for e in ellipses
        ]
        return tuple(ellipses)

    def has(self, key: str) -> bool:
        return key in self.raw


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to name, audit, and replay one run."""

    experiment_id: str
    protocol: str
    seeds: dict
    model: str
    operator: str
    config: AcidConfig
    artifacts: tuple
    path: str


# ---------------------------------------------------------------------------
# construction from a config view

def _build_model(view: ConfigView):
    kind = view.get_str("model", "fourier", choices={"fourier", "radon"})
    side = view.get_int("side", 64, minimum=2)
    if kind == "fourier":
        pattern = view.get_str(
            "mask_pattern", "gaussian2d", choices={"full", "gaussian2d", "radial"}
        )
        rate = view.get_float("mask_rate", 0.3, minimum=0.0, exclusive=True)
        seed = view.get_int("mask_seed", 7)
        if rate > 1.0:
            raise ConfigKeyError("mask_rate", f"must be <= 1, got {rate}")
        try:
            model = fourier_model(make_mask(pattern, rate, side, seed))
        except ValidationError as err:
            raise ConfigKeyError("mask_rate", str(err)) from None
        descriptor = f"fourier {pattern} rate {rate} side {side} seed {seed}"
    else:
        views = view.get_int("views", 40, minimum=1)
        full = view.get_int("full_angles", 180, minimum=1)
        if views > full:
            raise ConfigKeyError("views", f"cannot keep {views} of {full} angles")
        model = radon_model(select_views(full, views, side))
        descriptor = f"radon {views}/{full} views side {side}"
    return model, descriptor, kind, side


def _build_phantom(view: ConfigView, side: int) -> Image:
    explicit = view.get_ellipses()
    if explicit is not None:
        spec = EllipsePhantomSpec(ellipses=explicit)
    else:
        count = view.get_int("phantom_count", 8, minimum=0)
        seed = view.get_int("phantom_seed", 7)
        spec = EllipsePhantomSpec.seeded(count, seed)
    f = make_phantom(spec, side)
    if view.get_bool("peak_normalize", True):
        peak = float(f.values.max())
        if peak > 0.0:
            f = Image(f.values / peak)
    if view.has("insert_text"):
        text = view.get_str("insert_text", "")
        row = view.get_int("insert_row", 2, minimum=0)
        col = view.get_int("insert_col", 2, minimum=0)
        intensity = view.get_float("insert_intensity", 1.0)
        try:
            glyph = text_glyph(text)
            f = insert_structure(f, StructuralInsert(glyph, (row, col), intensity))
        except ValidationError as err:
            raise ConfigKeyError("insert_text", str(err)) from None
    return f


def _build_operator(view: ConfigView, model, config_dir: str):
    kind = view.get_str("operator", "adjoint", choices={"adjoint", "automap"})
    if kind == "adjoint":
        return build_adjoint_recon(model), "adjoint"
    blob = view.get_str("operator_blob", "")
    if not blob:
        raise ConfigKeyError("operator_blob", "required when operator = automap")
    path = blob if os.path.isabs(blob) else os.path.join(config_dir, blob)
    if not os.path.exists(path):
        raise ConfigKeyError("operator_blob", f"no such file: {blob}")
    return load_operator(path, model), f"automap {blob}"


def _build_acid_config(view: ConfigView) -> AcidConfig:
    lambda_ = view.get_float("lambda", 8.0, minimum=0.0, exclusive=True)
    mu = view.get_float("mu", 0.0, minimum=0.0)
    epsilon = view.get_float("epsilon", 0.004, minimum=0.0, exclusive=True)
    iterations = view.get_int("iterations", 50, minimum=1)
    normalize = view.get_bool("normalize", False)
    return AcidConfig(
        lambda_=lambda_, epsilon=epsilon, iterations=iterations, normalize=normalize, mu=mu
    )


def _build_attack_config(view: ConfigView, f: Image, base_seed: int):
    gamma = view.get_float("gamma", 0.0, minimum=0.0)
    step = view.get_float("attack_step", 0.02, minimum=0.0, exclusive=True)
    momentum = view.get_float("attack_momentum", 0.9, minimum=0.0)
    iters = view.get_int("attack_iters", 200, minimum=0)
    if momentum >= 1.0:
        raise ConfigKeyError("attack_momentum", f"must be < 1, got {momentum}")
    if view.has("attack_budget"):
        budget = view.get_float("attack_budget", 0.0, minimum=0.0, exclusive=True)
    else:
        fraction = view.get_float("attack_budget_fraction", 0.2, minimum=0.0, exclusive=True)
        budget = fraction * float(np.linalg.norm(f.values))
    seed = view.get_int("attack_seed", base_seed)
    cfg = AttackConfig(
        gamma=gamma, step=step, momentum=momentum, max_iters=iters, norm_budget=budget
    )
    return cfg, seed


# ---------------------------------------------------------------------------
# artifact helpers

def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(str(c) for c in row) for row in rows)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))


class _Emitter:
    """Tracks artifact paths relative to the run directory as they land."""

    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.relative: list = []

    def path(self, name: str) -> str:
        self.relative.append(name)
        return os.path.join(self.out_dir, name)

    def image(self, name: str, img: Image, window=(0.0, 1.0)) -> None:
        write_f64grid(self.path(name + ".f64"), img)
        write_pgm(self.path(name + ".pgm"), img, window)


# ---------------------------------------------------------------------------
# the protocols

def _run_reconstruct(view, emit, seeds):
    model, model_desc, _, side = _build_model(view)
    f = _build_phantom(view, side)
    op, op_desc = _build_operator(view, model, view.config_dir)
    acid = _build_acid_config(view)
    sigma = view.get_float("noise_sigma", 0.0, minimum=0.0)
    p0 = model.apply(f)
    if sigma > 0.0:
        seeds["noise_seed"] = view.get_int("noise_seed", seeds["seed"])
        p0 = add_noise(p0, sigma, seeds["noise_seed"])
    out, history = acid_run(p0, model, op, acid, ground_truth=f)
    emit.image("truth", f)
    emit.image("final", out)
    write_history_csv(emit.path("history.csv"), history)
    return model_desc, op_desc, acid


def _run_ablate(view, emit, seeds):
    model, model_desc, _, side = _build_model(view)
    f = _build_phantom(view, side)
    op, op_desc = _build_operator(view, model, view.config_dir)
    acid = _build_acid_config(view)
    sigma = view.get_float("noise_sigma", 0.0, minimum=0.0)
    p0 = model.apply(f)
    if sigma > 0.0:
        seeds["noise_seed"] = view.get_int("noise_seed", seeds["seed"])
        p0 = add_noise(p0, sigma, seeds["noise_seed"])
    rows = []
    full, _ = acid_run(p0, model, op, acid)
    rows.append(("full", _fmt(psnr(f, full, 1.0)), _fmt(ssim(f, full, 1.0))))
    emit.image("full", full)
    for variant in ("NI", "NDL", "NCS"):
        out, _ = acid_ablate(variant, p0, model, op, acid)
        rows.append((variant, _fmt(psnr(f, out, 1.0)), _fmt(ssim(f, out, 1.0))))
        emit.image(variant.lower(), out)
    _write_csv(emit.path("ablate.csv"), "variant,psnr,ssim", rows)
    return model_desc, op_desc, acid


def _run_sweep(view, emit, seeds):
    model, model_desc, kind, side = _build_model(view)
    del model  # the sweep rebuilds a model per rate; this one fixed the keys
    f = _build_phantom(view, side)
    acid = _build_acid_config(view)
    rates = view.get_floats("rates", [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5])
    kwargs = {}
    if kind == "fourier":
        kwargs["mask_pattern"] = view.consumed["mask_pattern"]
        kwargs["mask_seed"] = int(view.consumed["mask_seed"])
    else:
        kwargs["full_angles"] = int(view.consumed["full_angles"])
        rates = [int(r) for r in rates]
    try:
        rows = data_sweep(rates, kind, f, acid, **kwargs)
    except ValidationError as err:
        raise ConfigKeyError("rates", str(err)) from None
    _write_csv(
        emit.path("sweep.csv"),
        "rate,psnr,ssim",
        [(_fmt(r.rate), _fmt(r.psnr), _fmt(r.ssim)) for r in rows],
    )
    return model_desc, "adjoint", acid


def _attack_common(view, emit, seeds):
    model, model_desc, _, side = _build_model(view)
    f = _build_phantom(view, side)
    op, op_desc = _build_operator(view, model, view.config_dir)
    acid = _build_acid_config(view)
    attack, attack_seed = _build_attack_config(view, f, seeds["seed"])
    seeds["attack_seed"] = attack_seed
    return model, model_desc, f, op, op_desc, acid, attack, attack_seed


def _summarize_attack(emit, result, clean_psnr, attacked_psnr):
    rows = [
        ("clean_psnr", _fmt(clean_psnr)),
        ("attacked_psnr", _fmt(attacked_psnr)),
        ("psnr_drop", _fmt(clean_psnr - attacked_psnr)),
        ("perturbation_norm", _fmt(result.perturbation_norm)),
        ("output_distortion", _fmt(result.output_distortion)),
    ]
    _write_csv(emit.path("summary.csv"), "quantity,value", rows)


def _run_attack_net(view, emit, seeds):
    model, model_desc, f, op, op_desc, acid, attack, attack_seed = _attack_common(
        view, emit, seeds
    )
    result = attack_network(op, model, f, attack, attack_seed)
    perturbed = Image(f.values + result.perturbation.values)
    clean = psnr(f, recon_forward(op, model.apply(f)), 1.0)
    attacked = psnr(perturbed, recon_forward(op, model.apply(perturbed)), 1.0)
    emit.image("perturbation", result.perturbation, window=(-0.1, 0.1))
    write_attack_trace(emit.path("trace.csv"), result)
    _summarize_attack(emit, result, clean, attacked)
    return model_desc, op_desc, acid


def _run_attack_acid(view, emit, seeds):
    model, model_desc, f, op, op_desc, acid, attack, attack_seed = _attack_common(
        view, emit, seeds
    )
    result = attack_acid(op, model, f, acid, attack, attack_seed)
    perturbed = Image(f.values + result.perturbation.values)
    out_clean, _ = acid_run(model.apply(f), model, op, acid)
    out_attacked, _ = acid_run(model.apply(perturbed), model, op, acid)
    clean = psnr(f, out_clean, 1.0)
    attacked = psnr(perturbed, out_attacked, 1.0)
    emit.image("perturbation", result.perturbation, window=(-0.1, 0.1))
    write_attack_trace(emit.path("trace.csv"), result)
    _summarize_attack(emit, result, clean, attacked)
    return model_desc, op_desc, acid


def _run_contraction(view, emit, seeds):
    model, model_desc, _, side = _build_model(view)
    f = _build_phantom(view, side)
    acid = _build_acid_config(view)
    sigmas = view.get_floats("contraction_sigmas", [0.2, 0.5, 0.8])
    summary = []
    for sigma in sigmas:
        if not 0.0 < sigma <= 1.0:
            raise ConfigKeyError("contraction_sigmas", f"sigma must be in (0, 1], got {sigma}")
        history = contraction_probe(sigma, model, f, acid)
        errors = history.observable_errors
        _write_csv(
            emit.path(f"contraction_{sigma}.csv"),
            "iter,observable_error",
            [(i + 1, _fmt(e)) for i, e in enumerate(errors)],
        )
        scale, rate = fit_geometric_rate(errors)
        summary.append((_fmt(sigma), _fmt(scale), _fmt(rate), _fmt(errors[-1])))
    _write_csv(emit.path("contraction.csv"), "sigma,fit_scale,fit_rate,terminal_error", summary)
    return model_desc, "contraction-probe", acid


def _run_noise_stability(view, emit, seeds):
    model, model_desc, _, side = _build_model(view)
    f = _build_phantom(view, side)
    op, op_desc = _build_operator(view, model, view.config_dir)
    acid = _build_acid_config(view)
    sigma = view.get_float("noise_sigma", 0.0, minimum=0.0)
    if sigma <= 0.0:
        raise ConfigKeyError("noise_sigma", "must be positive for noise-stability")
    draws = view.get_int("stability_draws", 16, minimum=1)
    seeds["noise_seed"] = view.get_int("noise_seed", seeds["seed"])
    p0 = model.apply(f)
    reference, _ = acid_run(p0, model, op, acid)
    ratios = []
    rows = []
    for draw in range(draws):
        noisy = add_noise(p0, sigma, seeds["noise_seed"] + draw)
        noise_norm = float(np.linalg.norm(noisy.as_real_vector() - p0.as_real_vector()))
        out, _ = acid_run(noisy, model, op, acid)
        delta = l2_norm(Image(out.values - reference.values))
        ratio = delta / noise_norm
        ratios.append(ratio)
        rows.append((draw, _fmt(noise_norm), _fmt(delta), _fmt(ratio)))
    _write_csv(emit.path("stability.csv"), "draw,noise_norm,output_delta,ratio", rows)
    top = max(ratios)
    if top > 0.0:
        counts, edges = np.histogram(ratios, bins=10, range=(0.0, top))
    else:
        counts, edges = np.array([len(ratios)]), np.array([0.0, 0.0])
    _write_csv(
        emit.path("histogram.csv"),
        "bin_lo,bin_hi,count",
        [(_fmt(edges[i]), _fmt(edges[i + 1]), int(counts[i])) for i in range(len(counts))],
    )
    return model_desc, op_desc, acid


_RUNNERS = {
    "reconstruct": _run_reconstruct,
    "ablate": _run_ablate,
    "sweep": _run_sweep,
    "attack-net": _run_attack_net,
    "attack-acid": _run_attack_acid,
    "contraction": _run_contraction,
    "noise-stability": _run_noise_stability,
}

MANIFEST_NAME = "run.manifest"


def _manifest_lines(experiment_id, protocol, view, artifacts) -> list:
    lines = [f"experiment_id = {experiment_id}", f"protocol = {protocol}"]
    for key in sorted(view.consumed):
        if key == "protocol":
            continue
        value = view.consumed[key]
        if key == "ellipse":
            lines.extend(f"ellipse = {entry}" for entry in value)
        else:
            lines.append(f"{key} = {value}")
    lines.extend(f"artifact = {name}" for name in artifacts)
    return lines


def _write_manifest(emit, experiment_id, protocol, view) -> str:
    artifacts = list(emit.relative) + [MANIFEST_NAME]
    lines = _manifest_lines(experiment_id, protocol, view, artifacts)
    path = os.path.join(emit.out_dir, MANIFEST_NAME)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
    return path


def _experiment_id(protocol: str, raw: dict) -> str:
    canon = [protocol]
    for key in sorted(raw):
        for value in raw[key]:
            canon.append(f"{key}={value}")
    return hashlib.sha256("\n".join(canon).encode()).hexdigest()[:12]


def _execute(
    raw: dict, out_dir: str, config_dir: str, seed_override=None, forced_id=None
) -> RunManifest:
    view = ConfigView(raw)
    view.config_dir = config_dir
    protocol = view.get_str("protocol", "", choices=set(PROTOCOLS) | {""})
    if not protocol:
        raise ConfigKeyError("protocol", "required (one of " + ", ".join(PROTOCOLS) + ")")
    seeds = {"seed": seed_override if seed_override is not None
             else view.get_int("seed", 0)}
    if seed_override is not None:
        view.consumed["seed"] = str(seed_override)
    emit = _Emitter(out_dir)
    experiment_id = forced_id if forced_id else _experiment_id(protocol, raw)
    try:
        model_desc, op_desc, acid = _RUNNERS[protocol](view, emit, seeds)
    except ConfigError:
        raise
    except Exception as err:
        # runtime failure: record what did get written, then let it propagate
        path = _write_manifest(emit, experiment_id, protocol, view)
        err.manifest = RunManifest(
            experiment_id=experiment_id,
            protocol=protocol,
            seeds=dict(seeds),
            model="",
            operator="",
            config=None,
            artifacts=tuple(emit.relative) + (MANIFEST_NAME,),
            path=path,
        )
        raise
    path = _write_manifest(emit, experiment_id, protocol, view)
    return RunManifest(
        experiment_id=experiment_id,
        protocol=protocol,
        seeds=dict(seeds),
        model=model_desc,
        operator=op_desc,
        config=acid,
        artifacts=tuple(emit.relative) + (MANIFEST_NAME,),
        path=path,
    )


def run_experiment(config_path, out_dir=None, seed=None) -> RunManifest:
    """Parse a config file, run its protocol, and write the manifest.

    out_dir defaults to `<config basename>-out` next to the config. A seed
    passed here overrides the config's `seed` key.
    """
    with open(config_path, "r", encoding="utf-8") as fh:
        raw = parse_config(fh.read())
    config_dir = os.path.dirname(os.path.abspath(config_path))
    if out_dir is None:
        stem = os.path.splitext(os.path.basename(config_path))[0]
        out_dir = os.path.join(config_dir, stem + "-out")
    return _execute(raw, out_dir, config_dir, seed_override=seed)


def run_from_manifest(manifest_path, out_dir) -> RunManifest:
    """Replay a run from its manifest; emitted files are byte-identical."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        raw = parse_config(fh.read())
    kept_id = raw.pop("experiment_id", [None])[0]
    raw.pop("artifact", None)
    config_dir = os.path.dirname(os.path.abspath(manifest_path))
    return _execute(raw, out_dir, config_dir, forced_id=kept_id)
