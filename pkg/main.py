"""
main.py
────────────────────────────────────────────────────────────
ENTRY POINT: the command-line interface of the breather experiments.

Usage:
    python main.py single-site --config cfg.json --out out/
    python main.py continue    --config cfg.json
    python main.py couple      --config cfg.json --threads 4
    python main.py cascade     --config cfg.json
    python main.py check-frequency --config cfg.json
    python main.py check-decay     --config cfg.json
    python main.py diagnose out/breather_0_eps0.json --config cfg.json

Or import and call from a notebook:
    from main import run
    out = run("single-site", load_config("cfg.json"))
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

# Load BREATHER_LOG_LEVEL and BREATHER_OUT from a .env file
load_dotenv()

from kam.cohomology import DiophantineReport, check_sequence, measure_diophantine
from kam.decay_spaces import DecayFunction, check_axioms, max_prefactor
from kam.embedding import derivative
from kam.errors import DegenerateEmbedding, KamError
from kam.kam_step import center_geometry, invariance_error, refresh_bundle
from kam.lattice_model import LatticeModel
from nodes.router import EXPERIMENT_VERBS
from schemas import AxiomModel, DiagnosisReport, DiophantineModel, ExperimentConfig
from utils import decay_function, default_out_dir, load_config, load_state, setup_logging

logger = logging.getLogger("main")

SEP = "=" * 90


# ─────────────────────────────────────────────
# INITIAL STATE FACTORY
# ─────────────────────────────────────────────
def _initial_state(verb: str, cfg: ExperimentConfig, out_dir: str) -> dict:
    """Starting PipelineState; list fields start empty and are appended by the branches."""
    return {
        "verb":         verb,
        "config":       cfg,
        "out_dir":      out_dir,
        "breathers":    [],     # single_site workers append here
        "continued":    [],     # set by continuation
        "eps":          0.0,
        "scan_rows":    [],     # scan workers append here
        "scan_table":   None,
        "coupled":      None,
        "stage":        0,
        "stage_states": [],     # cascade stages append here
        "artifacts":    [],
        "summary":      {},
    }


# ─────────────────────────────────────────────
# GRAPH VERBS
# ─────────────────────────────────────────────
def run(verb: str, cfg: ExperimentConfig, out_dir: Optional[str] = None,
        threads: Optional[int] = None) -> dict:
    """
    Runs one experiment verb through the LangGraph pipeline.

    Returns the final state dict. Key fields:
      out["summary"]   → JSON-ready summary (also written to summary.json)
      out["artifacts"] → every file written
    """
    from graph import app

    out_dir = out_dir or default_out_dir()
    run_config = {"recursion_limit": 50}
    if threads:
        run_config["max_concurrency"] = threads
    out = app.invoke(_initial_state(verb, cfg, out_dir), config=run_config)

    # ── Pretty Print Summary ──────────────────────────────────────
    summary = out.get("summary") or {}
    print(f"\n{SEP}")
    print(f"  VERB          : {verb}")
    print(f"  FREQUENCIES   : {summary.get('frequencies')}")
    print(f"  EPS           : {out.get('eps')}")
    for b in summary.get("breathers", []):
        print(f"  BREATHER      : ω={b['omega']:.6g}  iterations={b['iterations']}  "
              f"|E|={b['error']:.3e}  |λ|={b['lam']:.3e}")
    if "scan" in summary:
        scan = summary["scan"]
        print(f"  SCAN RATE     : {scan['fitted_rate']:.4g} (β̃={scan['beta_tilde']:g})  "
              f"decreasing={scan['strictly_decreasing']}")
    if "coupled" in summary:
        print(f"  COUPLED |E|   : {summary['coupled'].get('error'):.3e}")
    if "cascade" in summary:
        print(f"  CASCADE |E|   : {summary['cascade']['errors']}")
        print(f"  INCREMENTS    : {summary['cascade']['increments']}")
    print(f"  ARTIFACTS     : {len(out.get('artifacts', []))} files in {out_dir}")
    print(f"{SEP}\n")
    return out


# ─────────────────────────────────────────────
# STANDALONE VERBS
# ─────────────────────────────────────────────
def diophantine_model(report: DiophantineReport) -> DiophantineModel:
    return DiophantineModel(omega=list(report.omega), nu=report.nu, kmax=report.kmax,
                            kappa=report.kappa, worst_mode=list(report.worst_mode or ()),
                            resonant=report.resonant, flavor=report.flavor)


def check_frequency(cfg: ExperimentConfig) -> List[DiophantineModel]:
    """One report per configured frequency, plus the concatenated truncations if there are several."""
    freq = cfg.frequency
    omegas = freq.resolved()
    reports = [measure_diophantine(w, freq.nu, freq.scan_kmax) for w in omegas]
    if len(omegas) > 1:
        nus = [freq.nu + r for r in range(1, len(omegas) + 1)]
        reports += check_sequence(omegas, nus, [freq.scan_kmax] * len(omegas))[1:]
    return [diophantine_model(r) for r in reports]


def check_decay(cfg: ExperimentConfig) -> List[AxiomModel]:
    """Axiom check of Γ for rate 0 and every configured rate."""
    decay, dim = cfg.decay, cfg.model.dim
    out = []
    for rate in [0.0] + list(decay.rates):
        a = max_prefactor(decay.alpha, rate, dim, decay.radius, decay.paired)
        rep = check_axioms(DecayFunction(decay.alpha, rate, a, dim), decay.radius)
        out.append(AxiomModel(alpha=decay.alpha, rate=rate, prefactor=a, dim=dim, radius=decay.radius,
                              sum_total=rep.sum_total, worst_convolution_ratio=rep.worst_convolution_ratio,
                              passed=rep.passed))
    return out


def diagnose(path: str, cfg: ExperimentConfig) -> DiagnosisReport:
    """Recompute every diagnostic of a stored state from scratch."""
    state, model_cfg, stored = load_state(path)
    model = LatticeModel.from_config(model_cfg).on_sites(state.K.sites)
    solver = cfg.solver
    gamma = decay_function(cfg.decay, dim=model_cfg.dim)
    _, norms = invariance_error(model, state, gamma, solver.rho)

    report = DiagnosisReport(state_file=str(path), error_sup=norms.sup, error_weighted=norms.weighted,
                             stored_error=stored.get("error"),
                             lambda_norm=float(np.abs(state.lam).max(initial=0.0)))
    report.diophantine = diophantine_model(
        measure_diophantine(state.omega, cfg.frequency.nu + state.l, cfg.frequency.scan_kmax))
    if report.diophantine.resonant:
        report.flags.append("resonant-frequency")

    if float(np.abs(derivative(state.K)).max(initial=0.0)) <= 1e-14:
        report.flags.append("degenerate-embedding")
        report.ok = False
        return report

    try:
        refreshed = refresh_bundle(model, state, solver, with_rates=True)
        rates = refreshed.bundle.rates
        report.rates = {"mu1": rates.mu1, "mu2": rates.mu2, "mu3": rates.mu3, "C_h": rates.C_h,
                        "defect": refreshed.bundle.defect}
        if not rates.dominated:
            report.flags.append("rates-not-dominated")
        report.isotropy = float(np.abs(center_geometry(model, refreshed).L).max())
    except DegenerateEmbedding as exc:
        logger.warning("%s: %s", path, exc)
        report.flags.append("degenerate-embedding")
    except KamError as exc:
        logger.warning("%s: %s", path, exc)
        report.flags.append(type(exc).__name__)

    if report.stored_error is not None and norms.sup > max(10 * report.stored_error, solver.tol):
        report.flags.append("error-spike")
    if norms.sup > solver.tol:
        report.flags.append("not-converged")
    if report.isotropy is not None and report.isotropy > 1e-8:
        report.flags.append("isotropy")
    report.ok = not report.flags
    return report


# ─────────────────────────────────────────────
# CLI ENTRY POINT
# ─────────────────────────────────────────────
def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="breathers", description="Quasi-periodic breathers on lattices.")
    p.add_argument("verb", choices=list(EXPERIMENT_VERBS) + ["check-frequency", "check-decay", "diagnose"])
    p.add_argument("state_file", nargs="?", help="state file (diagnose only)")
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="max parallel branches")
    p.add_argument("--seed", type=int, default=None, help="seed for guess perturbations")
    p.add_argument("--log-level", default=None)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"experiment": cfg.experiment.model_copy(update={"seed": args.seed})})

        if args.verb == "check-frequency":
            print(json.dumps([r.model_dump(mode="json") for r in check_frequency(cfg)], indent=2))
        elif args.verb == "check-decay":
            reports = check_decay(cfg)
            print(json.dumps([r.model_dump(mode="json") for r in reports], indent=2))
            return 0 if all(r.passed for r in reports) else 2
        elif args.verb == "diagnose":
            if not args.state_file:
                raise ValueError("diagnose needs a state file")
            report = diagnose(args.state_file, cfg)
            print(report.model_dump_json(indent=2))
        else:
            run(args.verb, cfg, args.out, args.threads)
    except KamError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 2
    except ValueError as exc:   # includes pydantic.ValidationError
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
