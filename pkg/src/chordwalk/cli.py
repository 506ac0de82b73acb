"""Experiment driver.

Usage::

    chordwalk sample   --config exp.json --out results/
    chordwalk spectrum --config exp.json --out results/ [--emit-matrix]
    chordwalk verify   --config exp.json --out results/ [--jobs 4]

One JSON document describes one experiment; see README.md for the fields.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import operator_lab as ol
from .chain import SAMPLERS, Proposal, make_sampler, run_chain
from .density import Density, density_from_spec
from .geometry import ConvexBody, body_from_spec
from .spectra import spectral_report

log = logging.getLogger("chordwalk")

KNOWN_KEYS = {"body", "density", "sampler", "proposal", "seed", "steps", "initial", "grid",
              "space", "directions", "tolerance", "perturb", "outputs", "trials"}
DEFAULT_OUTPUTS = {"trajectory": "trajectory.csv", "summary": "summary.json",
                   "report": "report.json", "verify": "verify.json", "matrix": "matrix.csv"}
DISCRETE_PROPOSALS = ("independent-uniform", "ball-walk", "lazy-ball-walk", "swap", "matrix")
CHECK_TOL = 1e-12


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.line = line
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


@dataclass
class ExperimentConfig:
    raw: dict
    source: str
    text: str = field(repr=False, default="")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def sampler(self) -> str:
        return self.raw["sampler"]

    @property
    def base_sampler(self) -> str:
        return self.sampler.replace("lazy:", "")

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def output(self, key: str) -> str:
        return self.raw.get("outputs", {}).get(key, DEFAULT_OUTPUTS[key])

    def error(self, message: str, key: str | None = None) -> ConfigError:
        return ConfigError(message, self.source, _line_of(self.text, key) if key else None)

    def stamp(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from None
    return parse_config(raw, str(path), text)


def parse_config(raw: dict, source: str = "<config>", text: str = "") -> ExperimentConfig:
    """Validate a config mapping; raises :class:`ConfigError` naming the line."""
    text = text or json.dumps(raw, indent=2)
    cfg = ExperimentConfig(raw, source, text)
    if not isinstance(raw, dict):
        raise cfg.error("config must be a JSON object")
    for key in raw:
        if key not in KNOWN_KEYS:
            raise cfg.error(f"unknown key {key!r}", key)
    if "seed" not in raw:
        raise cfg.error("a seed is required")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise cfg.error("seed must be an integer in [0, 2^64)", "seed")
    if "sampler" not in raw:
        raise cfg.error("a sampler is required")
    if not isinstance(raw["sampler"], str) or cfg.base_sampler not in SAMPLERS or \
            not raw["sampler"].endswith(cfg.base_sampler):
        raise cfg.error(f"unknown sampler {raw['sampler']!r}; expected one of "
                        f"{', '.join(SAMPLERS)} optionally prefixed by 'lazy:'", "sampler")
    has_prop = "proposal" in raw
    if cfg.base_sampler == "metropolis" and not has_prop:
        raise cfg.error("the metropolis sampler needs a proposal", "sampler")
    if cfg.base_sampler != "metropolis" and has_prop:
        raise cfg.error(f"sampler {cfg.sampler!r} takes no proposal", "proposal")
    if has_prop and raw["proposal"].get("type") not in DISCRETE_PROPOSALS:
        raise cfg.error(f"unknown proposal type {raw['proposal'].get('type')!r}", "proposal")
    if "steps" in raw and (not isinstance(raw["steps"], int) or raw["steps"] < 0):
        raise cfg.error("steps must be a non-negative integer", "steps")
    if "grid" in raw and "space" in raw:
        raise cfg.error("give either a grid or an explicit space, not both", "space")
    return cfg


# ---------------------------------------------------------------------------
# building blocks

def _body(cfg: ExperimentConfig) -> ConvexBody:
    if "body" not in cfg.raw:
        raise cfg.error("this command needs a body")
    try:
        return body_from_spec(cfg.raw["body"])
    except (KeyError, TypeError, ValueError) as exc:
        raise cfg.error(f"bad body: {exc}", "body") from None


def _density(cfg: ExperimentConfig, body: ConvexBody) -> Density:
    try:
        return density_from_spec(cfg.raw.get("density", {"type": "uniform"}), body)
    except (KeyError, TypeError, ValueError) as exc:
        raise cfg.error(f"bad density: {exc}", "density") from None


def build_space(cfg: ExperimentConfig) -> ol.DiscreteSpace:
    if "space" in cfg.raw:
        spec = cfg.raw["space"]
        try:
            return ol.discrete_space(spec["rho"], spec.get("volume"), spec.get("labels"))
        except (KeyError, TypeError, ValueError) as exc:
            raise cfg.error(f"bad space: {exc}", "space") from None
    if "grid" not in cfg.raw:
        raise cfg.error("spectral runs need a grid or an explicit space")
    body = _body(cfg)
    try:
        return ol.grid_space(body, _density(cfg, body), cfg.raw["grid"])
    except ValueError as exc:
        raise cfg.error(f"bad grid: {exc}", "grid") from None


def discrete_proposal(cfg: ExperimentConfig, space: ol.DiscreteSpace) -> np.ndarray:
    spec = cfg.raw["proposal"]
    kind = spec["type"]
    try:
        if kind == "independent-uniform":
            return ol.independent_uniform_proposal(space)
        if kind in ("ball-walk", "lazy-ball-walk"):
            return ol.ball_walk_proposal(space, float(spec.get("radius", 1.0)), lazy=kind == "lazy-ball-walk")
        if kind == "swap":
            if space.n != 2:
                raise ValueError("the swap proposal needs a two-cell space")
            return ol.swap_proposal()
        return np.asarray(spec["B"], dtype=float)
    except (KeyError, ValueError) as exc:
        raise cfg.error(f"bad proposal: {exc}", "proposal") from None


def build_matrix(cfg: ExperimentConfig, space: ol.DiscreteSpace):
    """Transition matrix for the configured sampler, plus its chord
    factorization when there is one."""
    fact = None
    match cfg.base_sampler:
        case "gibbs":
            P, fact = ol.build_gibbs_matrix(space)
        case "hit-and-run":
            try:
                P, fact = ol.build_hit_and_run_matrix(space, cfg.raw.get("directions", "axes+diagonals"))
            except ValueError as exc:
                raise cfg.error(str(exc), "directions") from None
        case "slice":
            P = ol.build_slice_matrix(space)
        case "metropolis":
            try:
                P = ol.build_metropolis_matrix(space, discrete_proposal(cfg, space))
            except ValueError as exc:
                raise cfg.error(str(exc), "proposal") from None
    for _ in range(cfg.sampler.count("lazy:")):
        P = ol.lazy_matrix(P)
    return P, fact


# ---------------------------------------------------------------------------
# commands

def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def cmd_sample(cfg: ExperimentConfig, out: Path) -> int:
    body = _body(cfg)
    rho = _density(cfg, body)
    proposal = None
    if cfg.base_sampler == "metropolis":
        spec = cfg.raw["proposal"]
        if spec["type"] not in ("independent-uniform", "ball-walk"):
            raise cfg.error("continuous Metropolis needs an independent-uniform or ball-walk proposal",
                            "proposal")
        proposal = Proposal.from_spec(spec)
    sampler = make_sampler(cfg.sampler, body, rho, proposal)
    initial = np.asarray(cfg.raw.get("initial", body.witness), dtype=float)
    try:
        sampler.validate(initial)
    except ValueError as exc:
        raise cfg.error(str(exc), "initial") from None
    steps = int(cfg.raw.get("steps", 1000))
    rng = np.random.default_rng(cfg.seed)

    traj, state = run_chain(sampler, initial, steps, rng, return_state=True)

    with open(out / cfg.output("trajectory"), "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash} seed={cfg.seed}\n")
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x{i + 1}" for i in range(body.dimension)])
        for k, row in enumerate(traj):
            w.writerow([k] + [format(v, ".17g") for v in row])
    summary = {**cfg.stamp(), "sampler": cfg.sampler, "steps": steps, "dimension": body.dimension,
               "means": traj.mean(axis=0).tolist(), "final": traj[-1].tolist()}
    if cfg.base_sampler == "metropolis":
        summary["acceptance_rate"] = state.accepted / steps if steps else None
    if "lazy:" in cfg.sampler:
        summary["hold_rate"] = state.held / steps if steps else None
    _write_json(out / cfg.output("summary"), summary)
    return 0


def cmd_spectrum(cfg: ExperimentConfig, out: Path, emit_matrix: bool = False) -> int:
    space = build_space(cfg)
    P, _ = build_matrix(cfg, space)
    report = spectral_report(P, tol=float(cfg.raw.get("tolerance", 1e-10)), matrix_id=cfg.sampler)
    payload = {**report.as_dict(), **cfg.stamp(), "n": space.n}
    if cfg.base_sampler == "hit-and-run":
        payload["directions"] = cfg.raw.get("directions", "axes+diagonals")
        payload["note"] = ("hit-and-run restricted to a finite set of lattice directions, "
                           "not the full sphere of directions")
    _write_json(out / cfg.output("report"), payload)
    if emit_matrix:
        with open(out / cfg.output("matrix"), "w", newline="") as fh:
            fh.write(f"# config_hash={cfg.config_hash} seed={cfg.seed}\n")
            w = csv.writer(fh)
            for row in P.entries:
                w.writerow([format(v, ".17g") for v in row])
    return 0


def run_checks(cfg: ExperimentConfig) -> list[dict]:
    """All verification checks for one config, as result records."""
    space = build_space(cfg)
    P, fact = build_matrix(cfg, space)
    rng = np.random.default_rng(cfg.seed)
    trials = int(cfg.raw.get("trials", 100))
    checks = []

    def add(name, residual, threshold=CHECK_TOL, note=None):
        rec = {"name": name, "residual": float(residual), "threshold": threshold,
               "passed": bool(residual <= threshold)}
        if note:
            rec["note"] = note
        checks.append(rec)

    if cfg.raw.get("perturb"):
        P = P.perturbed()
    add("detailed_balance", ol.check_detailed_balance(P))
    add("row_stochastic", ol.check_stochastic(P))
    add("stationarity", ol.stationarity_residual(P))

    if fact is not None:
        rep = ol.verify_factorization(P, fact)
        for key, val in rep.as_dict().items():
            add(f"factorization.{key}", val)
        add("factorization.adjoint_trials", ol.adjoint_trials(fact, rng, trials))

    kernel = None
    if cfg.base_sampler == "metropolis":
        B = discrete_proposal(cfg, space)
        kernel = B
        P_slice = ol.build_metropolis_via_slice(space, B)
        base = ol.build_metropolis_matrix(space, B)
        add("slice_equals_metropolis", float(np.max(np.abs(P_slice.entries - base.entries))))
    if cfg.base_sampler in ("slice", "metropolis"):
        try:
            F = ol.slice_factorization(space, kernel)
        except ValueError as exc:
            checks.append({"name": "level_decomposition", "skipped": True, "note": str(exc),
                           "passed": True})
        else:
            base = ol.build_slice_matrix(space) if kernel is None else ol.build_metropolis_matrix(space, kernel)
            rep = ol.verify_factorization(base, F)
            add("level_factorization.product", rep.product)
            add("level_factorization.self_adjointness", rep.self_adjointness)
            add("level_factorization.adjoint", rep.adjoint)
            add("level_decomposition", ol.level_decomposition_check(space, kernel, rng, trials))
    return checks


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    checks = run_checks(cfg)
    passed = all(c["passed"] for c in checks)
    _write_json(out / cfg.output("verify"), {**cfg.stamp(), "sampler": cfg.sampler,
                                             "checks": checks, "passed": passed})
    for c in checks:
        status = "skip" if c.get("skipped") else ("PASS" if c["passed"] else "FAIL")
        log.info("%s %-40s %s", status, c["name"], c.get("residual", ""))
    return 0 if passed else 1


def run_one(command: str, config_path: str, out: str, emit_matrix: bool = False) -> int:
    cfg = load_config(config_path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if command == "sample":
        return cmd_sample(cfg, out_dir)
    if command == "spectrum":
        return cmd_spectrum(cfg, out_dir, emit_matrix)
    return cmd_verify(cfg, out_dir)


def _safe_run(args):
    try:
        return run_one(*args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chordwalk", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("sample", "run a chain and write its trajectory"),
                        ("spectrum", "build an exact transition matrix and report its spectrum"),
                        ("verify", "check factorizations, reversibility and the slice/Metropolis identity")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", action="append", required=True,
                       help="experiment JSON (repeat for several experiments)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="run this many experiments in parallel")
        p.add_argument("--emit-matrix", action="store_true", help="also write matrix.csv (spectrum)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    configs = args.config
    if len(configs) == 1:
        jobs = [(args.command, configs[0], args.out, args.emit_matrix)]
    else:
        jobs = [(args.command, c, os.path.join(args.out, Path(c).stem), args.emit_matrix) for c in configs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_safe_run, jobs))
    else:
        codes = [_safe_run(j) for j in jobs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
