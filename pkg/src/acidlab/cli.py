"""Command-line front end.

One subcommand per protocol plus `phantom`, `forward`, and `metrics` for
quick inspection. Every subcommand takes --config/--out/--seed; a protocol
subcommand with no config runs the all-defaults canonical instance. Exit
codes: 0 success, 2 for anything wrong with the configuration, 3 for
runtime failures (divergence, aborted attacks, unwritable outputs).
"""

from __future__ import annotations

import os
import sys

import click
import numpy as np

from acidlab.grid import Image, psnr, read_f64grid, ssim, write_f64grid, write_pgm
from acidlab.runner import (
    PROTOCOLS,
    ConfigError,
    ConfigKeyError,
    ConfigView,
    _build_model,
    _build_phantom,
    _execute,
    parse_config,
)


def _load_raw(config):
    if config is None:
        return {}, os.getcwd()
    try:
        with open(config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {config}: {err.strerror}") from None
    return parse_config(text), os.path.dirname(os.path.abspath(config))


def _default_out(config, fallback):
    if config is not None:
        stem = os.path.splitext(os.path.basename(config))[0]
        return os.path.join(os.path.dirname(os.path.abspath(config)), stem + "-out")
    return fallback


def _shared_options(fn):
    fn = click.option("--config", type=str, default=None, help="flat key = value file")(fn)
    fn = click.option("--out", type=str, default=None, help="artifact directory")(fn)
    fn = click.option("--seed", type=int, default=None, help="override the config seed")(fn)
    return fn


def _run_protocol(protocol, config, out, seed):
    try:
        raw, config_dir = _load_raw(config)
        stated = raw.get("protocol")
        if stated is not None and stated != [protocol]:
            raise ConfigKeyError(
                "protocol", f"config says {stated[0]!r} but the subcommand is {protocol!r}"
            )
        raw["protocol"] = [protocol]
        out_dir = out or _default_out(config, protocol + "-out")
        manifest = _execute(raw, out_dir, config_dir, seed_override=seed)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except Exception as err:  # noqa: BLE001 - the boundary maps everything to exit 3
        click.echo(f"runtime error: {err}", err=True)
        sys.exit(3)
    click.echo(
        f"{manifest.protocol} {manifest.experiment_id}: "
        f"{len(manifest.artifacts)} artifacts in {os.path.dirname(manifest.path)}"
    )


@click.group()
def main():
    """Desk-scale ACID reconstruction experiments."""


def _register(protocol):
    @main.command(name=protocol, help=f"run the {protocol} protocol")
    @_shared_options
    def _cmd(config, out, seed):
        _run_protocol(protocol, config, out, seed)


for _protocol in PROTOCOLS:
    _register(_protocol)


@main.command(help="render the configured phantom to F64GRID and PGM")
@_shared_options
def phantom(config, out, seed):
    try:
        raw, _ = _load_raw(config)
        raw.pop("protocol", None)
        view = ConfigView(raw)
        side = view.get_int("side", 64, minimum=2)
        f = _build_phantom(view, side)
        out_dir = out or _default_out(config, "phantom-out")
        os.makedirs(out_dir, exist_ok=True)
        write_f64grid(os.path.join(out_dir, "phantom.f64"), f)
        write_pgm(os.path.join(out_dir, "phantom.pgm"), f, (0.0, 1.0))
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except Exception as err:  # noqa: BLE001
        click.echo(f"runtime error: {err}", err=True)
        sys.exit(3)
    click.echo(f"phantom: 2 artifacts in {out_dir}")


@main.command(help="measure the configured phantom through the forward model")
@_shared_options
def forward(config, out, seed):
    try:
        raw, config_dir = _load_raw(config)
        raw.pop("protocol", None)
        view = ConfigView(raw)
        view.config_dir = config_dir
        model, _, _, side = _build_model(view)
        f = _build_phantom(view, side)
        p = model.apply(f)
        out_dir = out or _default_out(config, "forward-out")
        os.makedirs(out_dir, exist_ok=True)
        values = np.asarray(p.values)
        lines = ["index,real,imag"]
        for i, v in enumerate(values):
            c = complex(v)
            lines.append(f"{i},{c.real!r},{c.imag!r}")
        with open(os.path.join(out_dir, "forward.csv"), "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except Exception as err:  # noqa: BLE001
        click.echo(f"runtime error: {err}", err=True)
        sys.exit(3)
    click.echo(f"forward: {len(values)} samples in {out_dir}")


@main.command(help="PSNR/SSIM between two F64GRID images")
@click.argument("reference", type=str)
@click.argument("candidate", type=str)
@click.option("--peak", type=float, default=1.0, help="PSNR peak value")
@click.option("--out", type=str, default=None, help="also write metrics.csv here")
def metrics(reference, candidate, peak, out):
    try:
        ref = read_f64grid(reference)
        cand = read_f64grid(candidate)
    except (OSError, ValueError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    try:
        p = psnr(ref, cand, peak)
        s = ssim(ref, cand, peak)
    except Exception as err:  # noqa: BLE001
        click.echo(f"runtime error: {err}", err=True)
        sys.exit(3)
    click.echo(f"psnr = {p!r}")
    click.echo(f"ssim = {s!r}")
    if out is not None:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "metrics.csv"), "wb") as fh:
            fh.write(f"quantity,value\npsnr,{p!r}\nssim,{s!r}\n".encode("ascii"))


if __name__ == "__main__":
    main()
