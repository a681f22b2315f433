"""Command-line entry point: ``privaudio <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import (
    EXPERIMENTS,
    ConfigError,
    NonConvergence,
    ScenarioConfig,
    build_instance,
    derive_seed,
    noise_length,
    run_experiment,
    write_manifest,
)
from .metrics import stoi
from .room import ingest_sweep_recordings, load_rir_set, save_rir_set
from .signal import read_signal, write_wav
from .synthesis import (
    InfeasibleDesign,
    design_mccs,
    design_nullspace,
    export_design,
    import_design,
    normalize_power,
    render_field,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4

log = logging.getLogger("privaudio")


def _config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig.default()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "full_scale", False):
        cfg = cfg.full_scale()
    return cfg


def _out(args, cfg) -> Path:
    return Path(args.out or cfg["output"]["dir"])


def cmd_rir(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg) / "rirs"
    if args.sweeps:
        if not args.sweep:
            raise ConfigError("--sweeps needs --sweep (the reference sweep WAV)")
        meta_path = Path(args.sweeps) / "manifest.json"
        if not meta_path.exists():
            raise ConfigError(f"{meta_path} with speaker/listener positions is required")
        meta = json.loads(meta_path.read_text())
        rirs = ingest_sweep_recordings(args.sweeps, args.sweep, int(cfg["dims"]["L_h"]))
        fs = read_signal(args.sweep).sample_rate_hz
        save_rir_set(out, rirs, fs, meta["speakers"], meta["listeners"])
    else:
        inst = build_instance(cfg, args.index)
        save_rir_set(out, inst.channels.rirs, inst.scene.sample_rate_hz, inst.speakers, inst.listeners, inst.scene)
    print(out)
    return EXIT_OK


def cmd_design(args) -> int:
    cfg = _config(args)
    inst = build_instance(cfg, args.index)
    s = cfg["solver"]
    out = _out(args, cfg) / "design"
    write_manifest(cfg, out, "design")
    status = EXIT_OK
    for i, method in enumerate(cfg.methods):
        seed = derive_seed(cfg.seed, inst.index, 10, i)
        if method == "mccs":
            d = design_mccs(inst.channels, inst.messages, noise_length(cfg, inst.channels.L_x),
                            float(cfg["noise"]["mccs_std"]), seed, float(s["tol"]), int(s["mccs_max_iter"]))
            converged = d.report.converged
        else:
            d = design_nullspace(inst.channels, inst.messages, float(cfg["noise"]["nullspace_std"]), seed,
                                 float(s["tol"]), int(s["max_iter"]))
            converged = d.carrier_report.converged and d.jam_report.converged
        _, scale = normalize_power(d.drive, float(cfg["noise"]["target_power"]))
        export_design(d, out / method, inst.channels, scale)
        print(out / method)
        if not converged:
            log.warning("%s design did not reach tol=%g", method, float(s["tol"]))
            if args.strict:
                status = EXIT_NONCONVERGED
    return status


def cmd_render(args) -> int:
    art = import_design(args.design)
    rirs, manifest = load_rir_set(args.rirs)
    if rirs.shape[1] != art.drive.shape[0]:
        raise ConfigError(f"RIR set has {rirs.shape[1]} speakers, design has {art.drive.shape[0]}")
    out = Path(args.out or "rendered")
    out.mkdir(parents=True, exist_ok=True)
    N = art.manifest["dims"]["N"]
    for k, sig in enumerate(render_field(art.drive, rirs)):
        write_wav(out / f"point_{k:03d}.wav", sig[:N], art.sample_rate_hz, subtype="float32")
    print(out)
    return EXIT_OK


def cmd_stoi(args) -> int:
    clean, degraded = read_signal(args.clean), read_signal(args.degraded)
    n = min(len(clean), len(degraded))
    if len(clean) != len(degraded):
        log.warning("length mismatch (%d vs %d); truncating to %d", len(clean), len(degraded), n)
    print(f"{stoi(clean.samples[:n], degraded.samples[:n], clean.sample_rate_hz):.6f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    table, path = run_experiment(args.command, cfg, args.out, args.workers, args.strict)
    print(path)
    infeasible = [r for r in table.rows if str(r.get("status", "ok")).startswith("infeasible")]
    if infeasible and args.command not in ("sweep-length", "demo"):
        return EXIT_INFEASIBLE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario TOML (defaults to the bundled desk scenario)")
    common.add_argument("--seed", type=int, help="override scenario.seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--out", help="output directory (default: output.dir)")
    common.add_argument("--full-scale", action="store_true", help="large grids and 100 configurations")
    common.add_argument("--strict", action="store_true", help="exit 4 when a solve does not converge")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="privaudio", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rir", parents=[common], help="simulate or measure an RIR set")
    r.add_argument("--index", type=int, default=0, help="configuration index for random placements")
    r.add_argument("--sweeps", help="directory of listener_XXX.wav sweep recordings")
    r.add_argument("--sweep", help="reference sweep WAV")
    r.set_defaults(func=cmd_rir)

    d = sub.add_parser("design", parents=[common], help="design and export drive signals")
    d.add_argument("--index", type=int, default=0)
    d.set_defaults(func=cmd_design)

    rd = sub.add_parser("render", parents=[common], help="render an exported design through an RIR set")
    rd.add_argument("design", help="directory written by 'design'")
    rd.add_argument("--rirs", required=True, help="RIR set directory")
    rd.set_defaults(func=cmd_render)

    s = sub.add_parser("stoi", parents=[common], help="STOI of a degraded WAV against a clean one")
    s.add_argument("clean")
    s.add_argument("degraded")
    s.set_defaults(func=cmd_stoi)

    for name in EXPERIMENTS:
        e = sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
        e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except InfeasibleDesign as exc:
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except NonConvergence as exc:
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
