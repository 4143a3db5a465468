"""Command-line front end.

Subcommands::

    cocolq simulate    --scenario NAME --alg NAME [--alpha A] [--horizon H]
                       [--steps T] [--seed S] [--noise SPEC] [--out FILE]
    cocolq sweep-alpha --scenario NAME --alpha A1,A2,... [--out FILE] ...
    cocolq certify     --in FILE --scenario NAME [--alpha A] [--out FILE]
    cocolq bench       [--out FILE]

Common options can also come from ``--config FILE`` (flat ``key=value``
lines, keys named like the long flags); explicit flags win. Noise specs are
``zero``, ``gauss:<var>``, or ``trunc-gauss:<var>:<cap>``. Exit codes:
0 success, 1 run error (one machine-readable ``error: ...`` line on
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import acceptance, harness, scenarios, stability
from .controller import RelaxAlpha
from .errors import CocolqError

ALGORITHMS = (
    "coco-lq", "coco-lq-predict", "naive-lti", "h-horizon", "offline-optimal",
)


def _alpha_value(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {text!r}")
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1), got {v}")
    return v


def _alpha_list(text: str) -> list:
    return [_alpha_value(piece) for piece in text.split(",") if piece != ""]


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _noise_spec(text: str):
    parts = text.split(":")
    kind = parts[0]
    try:
        if kind == "zero" and len(parts) == 1:
            return harness.Zero()
        if kind == "gauss" and len(parts) == 2:
            return harness.Gaussian(float(parts[1]))
        if kind == "trunc-gauss" and len(parts) == 3:
            return harness.TruncatedGaussian(float(parts[1]), float(parts[2]))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(
        f"bad noise spec {text!r}; use zero, gauss:<var>, or "
        f"trunc-gauss:<var>:<cap>"
    )


def _load_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected key=value, got {line!r}"
                )
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


_CONFIG_PARSERS = {
    "scenario": str,
    "alg": str,
    "alpha": _alpha_value,
    "horizon": _positive_int,
    "steps": _positive_int,
    "seed": int,
    "noise": _noise_spec,
    "out": str,
}


def _merged(args: argparse.Namespace, key: str, default=None):
    """CLI flag if given, else config-file value, else default."""
    cli = getattr(args, key.replace("-", "_"), None)
    if cli is not None:
        return cli
    cfg = getattr(args, "_config_values", {})
    if key in cfg:
        parser = _CONFIG_PARSERS.get(key, str)
        try:
            return parser(cfg[key])
        except argparse.ArgumentTypeError as exc:
            raise ValueError(f"config key {key}: {exc}") from exc
    return default


def _build_algorithm(name: str, alpha: float, horizon: int):
    if name == "coco-lq":
        return harness.CocoLQ(alpha=alpha, fallback=RelaxAlpha())
    if name == "coco-lq-predict":
        return harness.CocoLQPredict(alpha=alpha, H=horizon,
                                     fallback=RelaxAlpha())
    if name == "naive-lti":
        return harness.NaiveLTI()
    if name == "h-horizon":
        return harness.HHorizon(H=horizon)
    if name == "offline-optimal":
        return harness.OfflineOptimal()
    raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")


def _build_sim_config(args, alpha=None) -> harness.SimConfig:
    scenario_name = _merged(args, "scenario")
    if scenario_name is None:
        raise ValueError("--scenario is required (flag or config file)")
    seed = int(_merged(args, "seed", 0))
    scn = scenarios.make_scenario(scenario_name, seed=seed)
    if alpha is None:
        alpha = float(_merged(args, "alpha", 0.4))
    alg = _build_algorithm(
        _merged(args, "alg", "coco-lq"),
        alpha,
        int(_merged(args, "horizon", 2)),
    )
    return harness.SimConfig(
        scenario=scn,
        algorithm=alg,
        steps=int(_merged(args, "steps", 500)),
        seed=seed,
        noise=_merged(args, "noise", harness.Gaussian(0.01)),
    )


def _cmd_simulate(args) -> int:
    cfg = _build_sim_config(args)
    traj, rep = harness.simulate(cfg)
    out = _merged(args, "out")
    if out:
        harness.write_trajectory_csv(out, traj)
    print(
        f"simulate: scenario={cfg.scenario.name} "
        f"alg={type(cfg.algorithm).__name__} steps={rep.steps_run} "
        f"avg_cost={rep.avg_cost:.6g} sup_state_norm={rep.sup_state_norm:.6g} "
        f"feasible={rep.n_feasible} fallback={rep.n_fallback} "
        f"infeasible={rep.n_infeasible}"
        + (f" out={out}" if out else "")
    )
    return 0


def _cmd_sweep(args) -> int:
    alphas = getattr(args, "alpha", None)
    if alphas is None:
        raw = getattr(args, "_config_values", {}).get("alpha")
        if raw is None:
            raise ValueError("sweep-alpha needs --alpha A1,A2,...")
        alphas = _alpha_list(raw)
    cfg = _build_sim_config(args, alpha=alphas[0])
    if not isinstance(cfg.algorithm, (harness.CocoLQ, harness.CocoLQPredict)):
        raise ValueError("sweep-alpha requires --alg coco-lq or coco-lq-predict")
    result = harness.alpha_sweep(cfg, alphas)
    out = _merged(args, "out")
    if out:
        harness.write_sweep_csv(out, result)
    for row in result.rows:
        if row.report is None:
            print(f"alpha={row.alpha:.4g} error: {row.error}")
        else:
            norm = ("" if row.report.normalized is None
                    else f" normalized={row.report.normalized:.6g}")
            print(f"alpha={row.alpha:.4g} avg_cost={row.report.avg_cost:.6g}"
                  f"{norm} sup_state_norm={row.report.sup_state_norm:.6g}")
    if out:
        print(f"sweep-alpha: wrote {out}")
    return 0


def _cmd_certify(args) -> int:
    src = _merged(args, "in")
    if src is None:
        raise ValueError("certify needs --in <trajectory csv>")
    scenario_name = _merged(args, "scenario")
    if scenario_name is None:
        raise ValueError("--scenario is required (flag or config file)")
    seed = int(_merged(args, "seed", 0))
    traj = harness.read_trajectory_csv(src)
    scn = scenarios.make_scenario(scenario_name, seed=seed)
    outcome = harness.certify_run(
        traj, scn, alpha=float(_merged(args, "alpha", 0.4)))
    out = _merged(args, "out")
    if out:
        stability.write_certificate_csv(outcome.certificate, out)
    cert = outcome.certificate
    verdict = "PASS" if (cert.passed and not outcome.audit.violations) \
        else "FAIL"
    print(
        f"certify: {verdict} steps={len(cert.records)} "
        f"contraction_margin={cert.worst_contraction_margin:.3e} "
        f"conditioning_margin={cert.worst_conditioning_margin:.3e} "
        f"transition_margin={cert.worst_transition_margin:.3e} "
        f"iss_violations={len(outcome.audit.violations)} "
        f"max_ratio={outcome.audit.max_ratio:.4f}"
        + (f" out={out}" if out else "")
    )
    return 0


def _cmd_bench(args) -> int:
    results = acceptance.run_all()
    for r in results:
        print(r.line())
    n_pass = sum(r.passed for r in results)
    print(f"bench: {n_pass}/{len(results)} criteria passed")
    out = _merged(args, "out")
    if out:
        with open(out, "w") as fh:
            json.dump(
                [{"criterion": r.number, "passed": r.passed,
                  "detail": r.detail, "seconds": round(r.seconds, 2)}
                 for r in results], fh, indent=2)
            fh.write("\n")
    return 0 if n_pass == len(results) else 1


def _add_common(sub: argparse.ArgumentParser, with_alpha_list=False):
    sub.add_argument("--scenario", choices=sorted(scenarios.SCENARIOS))
    sub.add_argument("--alg", choices=ALGORITHMS)
    if with_alpha_list:
        sub.add_argument("--alpha", type=_alpha_list, metavar="A1,A2,...")
    else:
        sub.add_argument("--alpha", type=_alpha_value)
    sub.add_argument("--horizon", type=_positive_int)
    sub.add_argument("--steps", type=_positive_int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--noise", type=_noise_spec,
                     help="zero | gauss:<var> | trunc-gauss:<var>:<cap>")
    sub.add_argument("--out")
    sub.add_argument("--config", help="flat key=value option file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cocolq",
        description="Covariance-constrained online LQ control toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="run one closed-loop simulation")
    _add_common(sim)
    sim.set_defaults(func=_cmd_simulate)

    sweep = subs.add_parser("sweep-alpha",
                            help="rerun one config across alphas")
    _add_common(sweep, with_alpha_list=True)
    sweep.set_defaults(func=_cmd_sweep)

    cert = subs.add_parser("certify",
                           help="re-derive stability certificates for a "
                                "recorded trajectory")
    _add_common(cert)
    cert.add_argument("--in", dest="in_", metavar="FILE",
                      help="trajectory CSV to certify")
    cert.set_defaults(func=_cmd_certify)

    bench = subs.add_parser("bench", help="run the acceptance battery")
    bench.add_argument("--out", help="write results as JSON")
    bench.add_argument("--config", help="flat key=value option file")
    bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config_values = (_load_config(args.config)
                               if getattr(args, "config", None) else {})
        # expose --in under the merged-lookup name
        if hasattr(args, "in_"):
            setattr(args, "in", args.in_)
        return args.func(args)
    except (CocolqError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
