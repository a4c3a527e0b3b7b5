"""Command-line driver: ``pointfield [global flags] <command> [options]``.

Every command reads one config file, writes CSV/JSON results into the
output directory and a ``manifest.json`` listing them with digests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import struct
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GapError, PointFieldError
from .fock import DampedForm, enumerate_mu, identity_form, theta, wick_monomial, wick_operator
from .functionals import Functional, evaluate, sigma_mu
from .models import ModelConfig, build_model
from .phasespace import (MAGIC, VERSION, assemble, classify, extract, lemma35_curve, match_spaces,
                         reconstruct, stability_check)
from .spmodel import dual_vectors, expansion_items
from .symmetry import conjugation, cubic_rotations, dilation, point_field, rotation, \
    verify_invariance

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad command-line arguments (exit code 2)."""


# ---------------------------------------------------------------------------
# output helpers

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    command: str
    arguments: dict
    config: str
    started: str
    finished: str = ""
    files: dict = field(default_factory=dict)

    def record(self, paths) -> None:
        for p in paths:
            self.files[Path(p).name] = sha256_file(p)

    def write(self, out: Path) -> Path:
        self.finished = _now()
        return write_json(out / "manifest.json", self.__dict__)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def load_config(path: str, seed: int | None) -> ModelConfig:
    p = Path(path)
    if p.suffix == ".json":
        try:
            text = json.loads(p.read_text(encoding="utf-8"))["config"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None
        cfg = ModelConfig.from_text(text)
    else:
        cfg = ModelConfig.load(p)
    return cfg if seed is None else replace(cfg, seed=seed)


# ---------------------------------------------------------------------------
# commands

def _tensor(cfg: ModelConfig, args):
    return assemble(cfg, cache_dir=args.cache, threads=args.threads)


def cmd_ngamma(cfg, args, out: Path) -> list[Path]:
    if not args.gamma:
        raise UsageError("ngamma needs at least one --gamma value")
    T = _tensor(cfg, args)
    rows = []
    report = None
    for g in args.gamma:
        n, _, _, report = extract(T, g)
        cut = g + T.eps_gap
        below = report.exponents[report.exponents <= cut]
        above = report.exponents[report.exponents > cut]
        gap_low = float(below.max()) if below.size else -math.inf
        gap_high = float(above.min()) if above.size else math.inf
        if len(T.radii) >= 8:
            stable = stability_check(T, g).stable
        else:
            stable = "na"
        rows.append((g, n, gap_low, gap_high, stable))
    files = [write_csv(out / "ngamma.csv", ("gamma", "N", "gap_low", "gap_high", "stable_flag"), rows)]
    files.append(write_csv(out / "scaling_report.csv", ("direction_id", "theta_hat", "residual"),
                           [(j, t, r) for j, (t, r) in enumerate(zip(report.exponents, report.residuals))]))
    return files


def expansion_rows(cfg: ModelConfig, gamma_max: float, tensor=None):
    """``(mu, theta, order, sigma residual, pairing residual, angle)`` per resolvable ``mu``."""
    model = build_model(cfg) if tensor is None else tensor.model
    basis = model.basis
    grid = model.grid
    items = set(expansion_items(grid))
    mus = [mu for mu in enumerate_mu(gamma_max, cfg.s)
           if mu.order <= basis.n_max and all(it in items for it, _ in mu.items())]
    duals = dual_vectors(grid)
    sigmas = []
    for mu in mus:
        if mu.order == 0:
            sigmas.append(Functional.vacuum(basis))
        else:
            sigmas.append(sigma_mu(mu, None, basis, duals=duals, seed=cfg.seed))
    ops = [wick_operator(mu, basis) for mu in mus]
    D = np.array([[evaluate(s, op) for op in ops] for s in sigmas])
    T = _tensor_for(cfg, tensor)
    _, space, _, _ = extract(T, gamma_max)
    rows = []
    for i, mu in enumerate(mus):
        form = wick_monomial(mu, basis, cfg.ell, T.support)
        err = float(np.max(np.abs(D[i] - np.eye(len(mus))[i])))
        angle = math.degrees(match_spaces(list(space.forms), [form]))
        rows.append((mu.label(), float(theta(mu, cfg.s)), mu.order, sigmas[i].residual, err, angle))
    return rows


def _tensor_for(cfg, tensor):
    return assemble(cfg) if tensor is None else tensor


def cmd_expansion_table(cfg, args, out: Path) -> list[Path]:
    T = _tensor(cfg, args)
    rows = expansion_rows(cfg, args.gamma_max, T)
    header = ("mu", "theta", "order", "sigma_residual", "pairing_residual", "match_angle_deg")
    return [write_csv(out / "expansion.csv", header, rows)]


def _named_form(name: str, T, gamma: float) -> DampedForm:
    model = T.model
    basis, S, ell = model.basis, T.support, T.ell
    if name == "identity":
        return identity_form(basis, ell, S)
    if name == "field":
        return point_field(basis, ell, S)
    if name.startswith("basis:"):
        _, space, _, _ = extract(T, gamma)
        j = int(name.split(":", 1)[1])
        if not 0 <= j < space.dim:
            raise UsageError(f"basis index {j} out of range 0..{space.dim - 1}")
        return space.forms[j]
    if name.startswith("mu:"):
        label = name.split(":", 1)[1]
        for mu in enumerate_mu(gamma, model.config.s):
            if mu.label() == label:
                return wick_monomial(mu, basis, ell, S)
        raise UsageError(f"no multi-index {label!r} with theta <= {gamma}")
    raise UsageError(f"unknown form {name!r}")


def cmd_reconstruct(cfg, args, out: Path) -> list[Path]:
    T = _tensor(cfg, args)
    phi = _named_form(args.form, T, args.gamma)
    res = reconstruct(phi, T, args.gamma)
    rows = [(r, e, n) for r, e, n in zip(res.radii, res.errors, res.norms)]
    rows.append(("summary", res.error_exponent, res.norm_exponent))
    return [write_csv(out / "reconstruct.csv", ("r", "error", "norm"), rows)]


def cmd_lemma35(cfg, args, out: Path) -> list[Path]:
    model = build_model(cfg)
    ell = cfg.ell if args.ell is None else args.ell
    results, order = lemma35_curve(model.basis, cfg.radii, ell)
    rows = [(x.radius, x.eps, x.err_damped, x.bound, x.err_total, "") for x in results]
    rows.append(("summary", "", "", "", "", order))
    header = ("r", "eps", "err_damped", "bound", "err_total", "fitted_order")
    return [write_csv(out / "lemma35.csv", header, rows)]


def symmetry_rows(cfg, T, gammas):
    basis = T.model.basis
    actions = []
    for R in cubic_rotations():
        tag = "".join(f"{'+-'[int(v < 0)]}{int(np.argmax(np.abs(row))) + 1}"
                      for row, v in zip(R, R[np.arange(3), np.argmax(np.abs(R), axis=1)]))
        actions.append((f"rotation[{tag}]", rotation(basis, R)))
    actions.append(("conjugation", conjugation(basis)))
    if cfg.mass == 0 and cfg.kind == "free_scalar":
        actions.append((f"dilation[{cfg.ratio:g}]", dilation(basis, cfg.ratio)))
    rows = []
    for g in gammas:
        _, space, _, _ = extract(T, g)
        for name, act in actions:
            rows.append((name, g, verify_invariance(act, space)))
    return rows


def cmd_symmetry(cfg, args, out: Path) -> list[Path]:
    if cfg.kind == "lutz":
        raise UsageError("symmetry needs a harmonic grid (free_scalar or multi_species)")
    T = _tensor(cfg, args)
    gammas = args.gamma or [0.0, 1.0, 2.0]
    rows = symmetry_rows(cfg, T, gammas)
    return [write_csv(out / "symmetry.csv", ("action", "gamma", "angle"), rows)]


def classify_config(cfg: ModelConfig, gammas, cache=None, threads: int = 1):
    counts = {}
    T = assemble(cfg, cache_dir=cache, threads=threads)
    for g in gammas:
        try:
            counts[g] = extract(T, g)[0]
        except GapError as exc:
            counts[g] = exc
    trend = None
    if cfg.kind == "multi_species":
        trend = []
        for k in range(1, len(cfg.masses) + 1):
            sub = replace(cfg, masses=cfg.masses[:k])
            trend.append(extract(assemble(sub, cache_dir=cache, threads=threads), 1.0)[0])
    return classify(counts, trend)


def cmd_classify(cfg, args, out: Path) -> list[Path]:
    gammas = args.gamma or [float(g) for g in range(int(cfg.gamma_max) + 1)]
    result = classify_config(cfg, gammas, args.cache, args.threads)
    return [write_json(out / "classify.json", {"verdict": result.verdict, "evidence": result.evidence})]


def cmd_cache(cfg, args, out: Path) -> list[Path]:
    if args.cache is None:
        raise UsageError("cache needs --cache <dir>")
    root = Path(args.cache)
    files = sorted(root.glob("*.pflb")) if root.exists() else []
    if args.action == "clear":
        for f in files:
            f.unlink()
        print(f"removed {len(files)} cache files")
        return []
    for f in files:
        with open(f, "rb") as fh:
            head = fh.read(117)
        if head[:4] != MAGIC or head[4] != VERSION:
            print(f"{f.name}: not a cache file")
            continue
        K, R, B, n_s, n_sig, _ = struct.unpack("<6Q", head[69:117])
        print(f"{f.name}: digest {head[5:69].decode()} radii {K} functionals {R} members {B} "
              f"states {n_s} dual rows {n_sig}")
    return []


COMMANDS = {
    "ngamma": cmd_ngamma,
    "expansion-table": cmd_expansion_table,
    "reconstruct": cmd_reconstruct,
    "lemma35": cmd_lemma35,
    "symmetry": cmd_symmetry,
    "classify": cmd_classify,
    "cache": cmd_cache,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointfield", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="config file (key = value lines) or a run manifest")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--cache", default=None, help="pairing-tensor cache directory")
    p.add_argument("--threads", type=int, default=1, help="threads for tensor assembly")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized probes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ngamma", help="approximation numbers N_gamma")
    s.add_argument("--gamma", type=float, nargs="*", default=[])
    s = sub.add_parser("expansion-table", help="dual pairs (sigma_mu, phi_mu) with theta <= gamma_max")
    s.add_argument("--gamma-max", type=float, default=2.0)
    s = sub.add_parser("reconstruct", help="local approximants of a field form")
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--form", default="field", help="identity, field, basis:<j> or mu:<label>")
    s = sub.add_parser("lemma35", help="polar-decomposition approximants of the smeared field")
    s.add_argument("--ell", type=float, default=None)
    s = sub.add_parser("symmetry", help="invariance of extracted field spaces")
    s.add_argument("--gamma", type=float, nargs="*", default=[])
    s = sub.add_parser("classify", help="short-distance class of the model")
    s.add_argument("--gamma", type=float, nargs="*", default=[])
    s = sub.add_parser("cache", help="inspect or clear the tensor cache")
    s.add_argument("action", choices=("inspect", "clear"))
    return p


def _error_record(out: Path, exc: BaseException) -> None:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, GapError):
        rec["clusters"] = [list(c) for c in exc.clusters]
    try:
        write_json(out / "error.json", rec)
    except OSError:
        pass
    print(json.dumps(rec), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.INFO)
    out = Path(args.out)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        if args.command == "cache":
            cfg = None
        elif args.config is None:
            raise UsageError(f"{args.command} needs --config")
        else:
            cfg = load_config(args.config, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        manifest = None
        if cfg is not None:
            arguments = {k: v for k, v in vars(args).items() if k not in ("out", "cache", "verbose")}
            manifest = RunManifest(cfg.digest(), __version__, args.command, arguments, cfg.to_text(), _now())
        files = COMMANDS[args.command](cfg, args, out)
        if manifest is not None:
            manifest.record(files)
            manifest.write(out)
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        _error_record(out, exc)
        return EXIT_USAGE
    except (PointFieldError, np.linalg.LinAlgError, MemoryError) as exc:
        _error_record(out, exc)
        return EXIT_FAIL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
