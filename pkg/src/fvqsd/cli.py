"""Command-line experiment runner.

    fvqsd run <config-file> [--key value]...
    fvqsd validate <config-file> [--key value]...
    fvqsd self-test <config-file> [--key value]...

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.  Verdict
outcomes are data, not exit codes; they land in verdict.json.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import traceback
from pathlib import Path

from . import __version__
from .backends import BACKEND
from .config import apply_overrides, config_as_dict, parse_config
from .errors import ConfigurationError, FvqsdError


def _parse_overrides(extra):
    pairs = []
    i = 0
    while i < len(extra):
        key = extra[i]
        if not key.startswith("--"):
            raise ConfigurationError(f"expected --key, got {key!r}")
        if i + 1 >= len(extra):
            raise ConfigurationError(f"override {key} is missing a value")
        pairs.append((key[2:], extra[i + 1]))
        i += 2
    return pairs


def _load_config(path, extra):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from None
    cfg = parse_config(text)
    return apply_overrides(cfg, _parse_overrides(extra))


def _cmd_validate(path, extra):
    cfg = _load_config(path, extra)
    print(json.dumps(config_as_dict(cfg), indent=2, sort_keys=True))
    return 0


def _cmd_run(path, extra):
    from .experiments import run_experiment

    cfg = _load_config(path, extra)
    if not cfg.output_dir:
        raise ConfigurationError("run requires output_dir")
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    verdicts, files = run_experiment(cfg, outdir)
    verdict_path = outdir / "verdict.json"
    with open(verdict_path, "w") as fh:
        json.dump(verdicts, fh, indent=2, sort_keys=True)
    files.append(str(verdict_path))
    manifest = {
        "config": config_as_dict(cfg),
        "code_version": __version__,
        "backend": BACKEND,
        "seed": cfg.seed,
        "outputs": sorted(str(Path(f).name) for f in files),
        "created_at": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(),
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    for v in verdicts:
        print(f"{v['criterion_id']}: value={v['value']:.6g} "
              f"threshold={v['threshold']:.6g} "
              f"{'PASS' if v['pass'] else 'FAIL'}")
    return 0


def _cmd_self_test(path, extra):
    """dt-halving and mesh-doubling consistency checks for the config."""
    import numpy as np

    from . import oracle
    from .fv import FvConfig, initial_state, run_until
    from .potential import builtin_potential

    cfg = _load_config(path, extra)
    p = builtin_potential(cfg.potential, cfg.potential_params())
    ok = True

    res = cfg.oracle_resolution
    lam1 = oracle.principal_eigenpair(oracle.build_operator(p, res)).lambda0
    lam2 = oracle.principal_eigenpair(oracle.build_operator(p, 2 * res)) \
        .lambda0
    rel = abs(lam1 - lam2) / lam2
    print(f"mesh-doubling: lambda0 {lam1:.6g} -> {lam2:.6g} "
          f"(rel change {rel:.3g}) {'PASS' if rel <= 5e-3 else 'FAIL'}")
    ok &= rel <= 5e-3

    n = min(cfg.n_particles[0], 200)
    t_end = min(cfg.block_time, 5.0)
    means = []
    for dt in (cfg.dt, cfg.dt / 2.0):
        fv_cfg = FvConfig(n, dt, cfg.seed)
        s = initial_state(p, fv_cfg, lo=[cfg.init_lo], hi=[cfg.init_hi])
        s = run_until(p, s, fv_cfg, t_end)
        means.append(float(np.mean(np.abs(s.positions[:, 0]))))
    spread = abs(means[0] - means[1])
    tol = 6.0 / np.sqrt(n)
    print(f"dt-halving: mean |x| {means[0]:.4f} vs {means[1]:.4f} "
          f"(diff {spread:.4f}, tol {tol:.4f}) "
          f"{'PASS' if spread <= tol else 'FAIL'}")
    ok &= spread <= tol
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fvqsd",
        description="Fleming-Viot / quasi-stationary distribution experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate", "self-test"):
        sp = sub.add_parser(name)
        sp.add_argument("config_file")
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args.config_file, extra)
        if args.command == "validate":
            return _cmd_validate(args.config_file, extra)
        return _cmd_self_test(args.config_file, extra)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FvqsdError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
