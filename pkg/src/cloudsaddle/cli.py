"""Command line entry point: ``cloudsaddle {run,stepsize,solve}``.

Exit codes are 0 on success, 2 for configuration errors, 3 on divergence
and 4 when an invariant check fails.  Failures print one line to stderr of
the form ``error=<kind> detail="<message>"`` followed by extra ``key=value``
pairs where useful.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import BallConvention, convergence_trace, detect_entry, lyapunov
from .config import ConfigError, RunConfig, load_config
from .problem import PrimalDualPoint
from .protocol import ProtocolError, init_network, run, synchronized_points
from .stepsize import PreconditionError, estimate_stepsize
from .uzawa import DivergenceError, UzawaConfig, kkt_residual, refine_saddle, solve_saddle

__all__ = ["main", "cmd_run", "cmd_stepsize", "cmd_solve", "compute_saddle", "write_trace",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_DIVERGENCE", "EXIT_INVARIANT"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_INVARIANT = 4

FALLBACK_SOLVER_RHO = 1e-3


class InvariantViolation(RuntimeError):
    def __init__(self, message, **counts):
        super().__init__(message)
        self.counts = counts


def _point_dict(pt: PrimalDualPoint) -> dict:
    return {"x": pt.x.tolist(), "mu": pt.mu.tolist()}


def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def compute_saddle(cfg: RunConfig):
    """Uzawa iterations followed by Newton refinement.

    Returns the saddle and a dict describing how it was obtained.  If the
    refinement does not certify a KKT point, the Uzawa iterate is returned
    and ``refined`` is false.
    """
    p = cfg.problem
    rho = cfg.solver_rho or cfg.rho or FALLBACK_SOLVER_RHO
    res = solve_saddle(p, cfg.init, UzawaConfig(rho, cfg.solver_max_steps, cfg.solver_tol))
    info = {"solver_rho": rho, "uzawa_steps": res.steps, "uzawa_converged": res.converged,
            "uzawa_displacement": res.displacement}
    try:
        ref = refine_saddle(p, res.point)
    except DivergenceError:
        ref = None
    if ref is not None and ref.converged:
        point = ref.point
        info["refined"] = True
    else:
        point = res.point
        info["refined"] = False
    info["kkt_residual"] = kkt_residual(p, point)
    return point, info


def write_trace(path: Path, records, n: int, m: int):
    """CSV with one row per timestep; floats use 17 significant digits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (["timestep", "phase"] + [f"xc{i + 1}" for i in range(n)]
              + [f"mu{j + 1}" for j in range(m)] + [f"own{i + 1}" for i in range(n)] + ["V", "in_ball"])
    fmt = "{:.17g}".format
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in records:
            row = [str(r.timestep), r.phase.name]
            row += [fmt(v) for v in r.x_c]
            row += [fmt(v) for v in r.mu_c]
            row += [fmt(v) for v in r.own_states]
            row += [fmt(r.V), "1" if r.in_ball else "0"]
            fh.write(",".join(row) + "\n")


def _entries(points, timesteps, saddle, epsilon):
    out = {}
    for conv in BallConvention:
        tr = convergence_trace(points, saddle, epsilon, convention=conv, timesteps=timesteps)
        hit = detect_entry(tr)
        out[conv.value] = None if hit is None else {"step": hit[0], "timestep": hit[1]}
    return out


def cmd_run(cfg: RunConfig, out_dir: Path):
    """Full pipeline; returns the summary dict.

    Raises
    ------
    DivergenceError, InvariantViolation, PreconditionError
    """
    p = cfg.problem
    saddle, saddle_info = compute_saddle(cfg)
    stepsize = None
    rho = cfg.rho
    if rho is None:
        rep = estimate_stepsize(p, saddle, cfg.epsilon, cfg.init, cfg.n_samples, cfg.seed,
                                cfg.convention, cfg.clip_orthant, cfg.safety_factor)
        stepsize = rep.to_dict()
        rho = rep.rho_recommended
    reporting = cfg.reference_saddle if cfg.reference_saddle is not None else saddle

    net = init_network(p, cfg.x0, cfg.mu0, rho, privacy=cfg.privacy, seed=cfg.seed)
    negative_mu = []

    def check_mu(rec):
        if any(v < 0 for v in rec.mu_c) or any(v < 0 for a in net.agents for v in a.last_mu):
            negative_mu.append(rec.timestep)

    net, records = run(net, cfg.total_timesteps, check_mu, saddle=reporting,
                       epsilon=cfg.epsilon, convention=cfg.convention)
    write_trace(out_dir / cfg.trace_file, records, p.n_agents, p.n_constraints)

    timesteps, points = synchronized_points(cfg.init, records)
    theory = convergence_trace(points, saddle, cfg.epsilon, convention=cfg.convention,
                               timesteps=timesteps)
    final = net.snapshot()
    summary = {
        "version": __version__,
        "config": cfg.source,
        "rho": rho,
        "epsilon": cfg.epsilon,
        "total_timesteps": cfg.total_timesteps,
        "privacy": cfg.privacy,
        "seed": cfg.seed,
        "convention": cfg.convention.value,
        "final": _point_dict(final),
        "computed_saddle": _point_dict(saddle) | saddle_info,
        "reference_saddle": None if cfg.reference_saddle is None else _point_dict(cfg.reference_saddle),
        "final_V": {"computed": lyapunov(final, saddle)},
        "entry": {"computed": _entries(points, timesteps, saddle, cfg.epsilon)},
        "verdicts": theory.summary(),
        "negative_multiplier_timesteps": len(negative_mu),
        "stepsize": stepsize,
    }
    if cfg.reference_saddle is not None:
        summary["final_V"]["reference"] = lyapunov(final, cfg.reference_saddle)
        summary["entry"]["reference"] = _entries(points, timesteps, cfg.reference_saddle, cfg.epsilon)
    selected = "reference" if cfg.reference_saddle is not None else "computed"
    summary["reported"] = {
        "saddle": selected,
        "final_V": summary["final_V"][selected],
        "entry": summary["entry"][selected][cfg.convention.value],
    }
    _write_json(out_dir / cfg.summary_file, summary)

    v = theory.summary()
    counts = {k: v[k] for k in ("annulus_failures", "outside_steps", "half_ball_failures",
                                "exits_after_entry")}
    counts["negative_multipliers"] = len(negative_mu)
    if not saddle_info["refined"]:
        # verdicts against an uncertified saddle are meaningless
        return summary
    if any(counts.values()):
        raise InvariantViolation("Lyapunov or multiplier invariant violated", **counts)
    return summary


def cmd_stepsize(cfg: RunConfig, out_dir: Path, n_samples: int | None = None):
    saddle, info = compute_saddle(cfg)
    rep = estimate_stepsize(cfg.problem, saddle, cfg.epsilon, cfg.init,
                            n_samples or cfg.n_samples, cfg.seed, cfg.convention,
                            cfg.clip_orthant, cfg.safety_factor)
    payload = rep.to_dict() | {"saddle": _point_dict(saddle), "saddle_refined": info["refined"],
                               "seed": cfg.seed, "clip_orthant": cfg.clip_orthant}
    _write_json(out_dir / "stepsize.json", payload)
    return rep


def cmd_solve(cfg: RunConfig, out_dir: Path):
    p = cfg.problem
    rho = cfg.rho or cfg.solver_rho or FALLBACK_SOLVER_RHO
    res = solve_saddle(p, cfg.init, UzawaConfig(rho, cfg.solver_max_steps, cfg.solver_tol))
    payload = {
        "rho": rho,
        "uzawa": _point_dict(res.point) | {"steps": res.steps, "converged": res.converged,
                                           "displacement": res.displacement,
                                           "kkt_residual": kkt_residual(p, res.point)},
    }
    try:
        ref = refine_saddle(p, res.point)
        payload["refined"] = _point_dict(ref.point) | {"converged": ref.converged,
                                                       "kkt_residual": kkt_residual(p, ref.point)}
    except DivergenceError:
        payload["refined"] = None
    _write_json(out_dir / "solve.json", payload)
    return payload


def _fail(kind: str, detail: str, code: int, **extra) -> int:
    parts = [f"error={kind}", f"detail={json.dumps(str(detail))}"]
    parts += [f"{k}={v}" for k, v in extra.items() if v is not None]
    print(" ".join(parts), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudsaddle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "simulate the cloud protocol and write a trace"),
                        ("stepsize", "estimate gamma1, gamma2 and a safe stepsize"),
                        ("solve", "run centralized Uzawa iterations")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", "-c", required=True,
                        help="YAML config path, or 'six_agent' for the bundled example")
        sp.add_argument("--out", "-o", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--convention", choices=[c.value for c in BallConvention], default=None,
                        help="ball convention for entry detection and sampling")
        sp.add_argument("--privacy", action=argparse.BooleanOptionalAction, default=None,
                        help="relabel other agents' variables for each agent")
        sp.add_argument("--timesteps", type=int, default=None, help="override total_timesteps")
        if name == "stepsize":
            sp.add_argument("--n-samples", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative", "--seed")
        if args.timesteps is not None and args.timesteps < 0:
            raise ConfigError("timesteps must be nonnegative", "--timesteps")
        if getattr(args, "n_samples", None) is not None and args.n_samples < 1:
            raise ConfigError("n_samples must be at least 1", "--n-samples")
        cfg = cfg.with_overrides(seed=args.seed, convention=args.convention,
                                 privacy=args.privacy, total_timesteps=args.timesteps)
    except ConfigError as exc:
        return _fail("config", exc.reason, EXIT_CONFIG, field=exc.field, line=exc.line)
    out_dir = Path(args.out if args.out is not None else cfg.output_dir)

    try:
        if args.command == "run":
            s = cmd_run(cfg, out_dir)
            entry = s["reported"]["entry"]
            print(f"rho={s['rho']:.6g} final_V={s['reported']['final_V']:.6g} "
                  f"entry_timestep={entry['timestep'] if entry else None} "
                  f"convention={s['convention']} out={out_dir}")
        elif args.command == "stepsize":
            rep = cmd_stepsize(cfg, out_dir, args.n_samples)
            print(f"gamma1={rep.gamma1:.6g} gamma2={rep.gamma2:.6g} rho_max={rep.rho_max:.6g} "
                  f"rho_recommended={rep.rho_recommended:.6g} samples={rep.samples_used}")
        else:
            payload = cmd_solve(cfg, out_dir)
            best = payload["refined"] if payload["refined"] and payload["refined"]["converged"] else payload["uzawa"]
            print("x=" + json.dumps(best["x"]) + " mu=" + json.dumps(best["mu"]))
    except DivergenceError as exc:
        return _fail("divergence", exc, EXIT_DIVERGENCE, step=exc.step)
    except InvariantViolation as exc:
        return _fail("invariant_violation", exc, EXIT_INVARIANT, **exc.counts)
    except (PreconditionError, ProtocolError) as exc:
        return _fail("invariant_violation", exc, EXIT_INVARIANT)
    except OSError as exc:
        return _fail("io", exc, EXIT_CONFIG)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
