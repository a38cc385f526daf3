"""Command-line entry point: ``bdrecon synthesize|reconstruct|evaluate|replicate``.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, preset
from .expr import ExpressionError
from .forward import FieldOracle, build_disk_mesh, solve_conductivity
from .reconstruct import (
    STAGES,
    NoAnchorError,
    ReconstructionResult,
    algorithm1,
    algorithm2,
    evaluate,
    read_result,
    reconstruct_general,
    write_result,
)
from .synth import SampleSet, add_noise, read_samples, sample_boundary, write_samples

logger = logging.getLogger("bdrecon")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2

STAGE_FILES = STAGES + ("comparison",)


class DataError(ValueError):
    pass


def build_source(cfg: ExperimentConfig):
    if cfg.source == "oracle":
        return FieldOracle.from_strings(cfg.oracle_u, cfg.phantom, cfg.p, cfg.q)
    if cfg.p != 2:
        raise ConfigError("finite element sources support p = 2 only; use source 'oracle'")
    mesh = build_disk_mesh(cfg.mesh_h)
    return solve_conductivity(mesh, cfg.phantom, cfg.dirichlet)


def synthesize(cfg: ExperimentConfig, noiseless: bool = False) -> SampleSet:
    s = sample_boundary(build_source(cfg), cfg.M, cfg.q)
    if not noiseless:
        s = add_noise(s, cfg.noise)
    return s


def run_reconstruction(cfg: ExperimentConfig, s: SampleSet) -> ReconstructionResult:
    """Dispatch on the exponents: q = 1 and q = 2 use the two algorithms."""
    if cfg.p == 2 and cfg.q == 1:
        return algorithm1(s, cfg.bounds, kernel_std=cfg.kernel_std or 0.0)
    if cfg.p == 2 and cfg.q == 2:
        return algorithm2(s, cfg.bounds, kernel_std=cfg.kernel_std)
    return reconstruct_general(s, cfg.bounds, cfg.p, cfg.q, kernel_std=cfg.kernel_std)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_stages(r: ReconstructionResult, truth: Optional[np.ndarray], out: Path) -> Dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    truth = np.full(r.M, np.nan) if truth is None else truth
    paths = {}
    for stage in STAGES:
        p = out / f"{stage}.csv"
        vals = r.stages[stage]
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "sigma", "sigma_plus", "sigma_minus", "sigma_true"])
            for j in range(r.M):
                w.writerow([_fmt(r.thetas[j]), _fmt(vals[j]), _fmt(r.sigma_plus[j]),
                            _fmt(r.sigma_minus[j]), _fmt(truth[j])])
        paths[stage] = p
    p = out / "comparison.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "sigma_smoothed", "sigma_true"])
        for j in range(r.M):
            w.writerow([_fmt(r.thetas[j]), _fmt(r.sigma_smoothed[j]), _fmt(truth[j])])
    paths["comparison"] = p
    return paths


def replicate(figure: str, out: Path, seed: Optional[int] = None,
              noiseless: bool = False, mesh_h: Optional[float] = None) -> dict:
    """Synthesize, add noise, reconstruct and evaluate one figure preset."""
    name = figure if figure.startswith("paper-") else f"paper-{figure}"
    overrides = {}
    if mesh_h is not None:
        overrides["mesh_h"] = mesh_h
    cfg = preset(name, **overrides)
    if seed is not None:
        cfg = replace(cfg, noise=replace(cfg.noise, seed=seed))
    s = synthesize(cfg, noiseless=noiseless)
    r = run_reconstruction(cfg, s)
    metrics = evaluate(r, s.sigma_true)
    metrics["figure"] = figure
    metrics["noiseless"] = noiseless
    out.mkdir(parents=True, exist_ok=True)
    write_samples(s, out / "samples.csv")
    write_result(r, out / "result.csv", metrics)
    write_stages(r, s.sigma_true, out)
    return metrics


def _config_from_args(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "oracle", None):
        kv = {}
        for item in args.oracle:
            if "=" not in item:
                raise ConfigError(f"--oracle expects key=value pairs, got {item!r}")
            k, v = item.split("=", 1)
            kv[k.strip()] = v.strip()
        unknown = set(kv) - {"u", "sigma", "p", "q"}
        if unknown:
            raise ConfigError(f"--oracle: unknown key(s) {', '.join(sorted(unknown))}")
        if "u" not in kv:
            raise ConfigError("--oracle requires u=EXPR")
        try:
            p = float(kv.get("p", cfg.p))
            q = float(kv.get("q", cfg.q))
        except ValueError:
            raise ConfigError("--oracle: p and q must be numbers") from None
        cfg = ExperimentConfig.from_dict({
            **{k: v for k, v in cfg.to_dict().items() if k not in ("noise", "bounds")},
            "noise": cfg.noise, "bounds": cfg.bounds,
            "source": "oracle", "oracle_u": kv["u"],
            "phantom": kv.get("sigma", cfg.phantom), "p": p, "q": q,
        })
    if args.seed is not None:
        cfg = replace(cfg, noise=replace(cfg.noise, seed=args.seed))
    return cfg


def cmd_synthesize(args) -> int:
    cfg = _config_from_args(args)
    s = synthesize(cfg, noiseless=args.noiseless)
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "samples.csv"
    write_samples(s, path)
    print(f"wrote {s.M} samples to {path}")
    print(f"  A in [{s.A.min():.4g}, {s.A.max():.4g}], N in [{s.N.min():.4g}, {s.N.max():.4g}], "
          f"H in [{s.H.min():.4g}, {s.H.max():.4g}]")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config_from_args(args)
    s = read_samples(args.samples, q=cfg.q)
    r = run_reconstruction(cfg, s)
    metrics = evaluate(r, s.sigma_true) if s.has_truth else {"M": r.M}
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_result(r, out / "result.csv", metrics)
    write_stages(r, s.sigma_true, out)
    print(f"wrote {out / 'result.csv'}")
    if s.has_truth:
        print(f"  rel L2 {metrics['rel_l2']:.4g} (smoothed {metrics['rel_l2_smoothed']:.4g}), "
              f"decided fraction {metrics['decided_fraction']:.3f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    res = read_result(args.result)
    truth = read_samples(args.truth)
    if truth.sigma_true is None:
        raise DataError(f"{args.truth}: no sigma_true column")
    if len(truth.thetas) != len(res["theta"]):
        raise DataError("result and truth have different sample counts")
    if not np.allclose(truth.thetas, res["theta"], rtol=0, atol=1e-12):
        raise DataError("result and truth sample angles differ")
    t = truth.sigma_true
    metrics = {}
    for key, col in (("", "sigma_est"), ("_smoothed", "sigma_est_smoothed")):
        est = res[col]
        metrics["rel_l2" + key] = float(np.linalg.norm(est - t) / np.linalg.norm(t))
        metrics["max_rel" + key] = float(np.max(np.abs(est - t) / np.abs(t)))
    metrics["decided_fraction"] = float(np.mean(res["label"] == "decided"))
    metrics["M"] = len(t)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text + "\n")
    return EXIT_OK


def cmd_replicate(args) -> int:
    if args.figure not in ("fig1", "fig2", "fig3"):
        raise ConfigError(f"unknown figure {args.figure!r}; choose fig1, fig2 or fig3")
    out = Path(args.out or "out") / args.figure
    metrics = replicate(args.figure, out, seed=args.seed, noiseless=args.noiseless,
                        mesh_h=args.mesh_h)
    print(f"{args.figure}: M={metrics['M']} rel L2 {metrics['rel_l2']:.4g} "
          f"smoothed {metrics['rel_l2_smoothed']:.4g} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdrecon", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--preset", metavar="NAME")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--out", metavar="DIR")

    p = sub.add_parser("synthesize", help="write a sample CSV")
    common(p)
    p.add_argument("--oracle", nargs="+", metavar="EXPR",
                   help="analytic source, e.g. u=x1 sigma=1 [p=2 q=2]")
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("reconstruct", help="reconstruct from a sample CSV")
    common(p)
    p.add_argument("samples", metavar="SAMPLES_CSV")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="compare a result CSV against truth")
    p.add_argument("result", metavar="RESULT_CSV")
    p.add_argument("truth", metavar="SAMPLES_CSV")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replicate", help="run a figure preset end to end")
    p.add_argument("figure", metavar="FIGURE", help="fig1, fig2 or fig3")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--mesh-h", type=float, dest="mesh_h")
    p.set_defaults(func=cmd_replicate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NoAnchorError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
