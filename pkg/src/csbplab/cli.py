"""Command-line interface.

Subcommands: ``catalog`` (list mechanisms), ``classify``, ``flow``,
``simulate``, ``verify``.  All file outputs carry a header with the tool
version, a digest of the effective configuration and the seed; identical
(config, seed) pairs produce byte-identical outputs, independent of the
thread count (per-run generators are spawned from one seed sequence and
results are aggregated in run order).
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .catalog import catalog_names, get_entry, mechanism_from_dict
from .errors import CsbplabError, FlowDomainError, MechanismError, UndecidableError
from .flow import FlowEvaluator
from .mechanisms import classify, predict_regime
from .paths import PathConfig
from .population import (
    DUMP_HEADER,
    detect_limit,
    dump_rows,
    simulate_blocks,
    simulate_fv_poisson,
    simulate_iv_cluster,
)
from .verify import (
    SuiteConfig,
    TestOutcome,
    coalescence_quadrature,
    extinction_curve,
    mc_coalescence,
    theorem12_suite,
)

SUITES = ("theorem12", "coalescence", "extinction", "grey-limits")


@dataclass
class ExperimentConfig:
    """Simulation run configuration (YAML round-trippable)."""

    mechanism: dict = field(default_factory=lambda: {"catalog": "feller"})
    x: float = 1.0
    horizon: float = 1.0
    n_blocks: int = 100
    runs: int = 100
    h: float = 1e-3
    delta: float = 1e-3
    eps: float = 1e-4
    s0: float = 0.5
    floor: float = 1e-6
    eta: float = 1e-2
    seed: int = 0
    threads: int = 1
    simulator: str = "blocks"          # blocks | fv-poisson | iv-cluster
    snapshots: list = field(default_factory=list)

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        known = {f for f in cls.__dataclass_fields__}
        bad = set(raw) - known
        if bad:
            raise MechanismError(f"unknown config keys: {sorted(bad)}")
        return cls(**raw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=True)

    def digest(self) -> str:
        # thread count is an execution detail, not part of the run identity
        ident = {k: v for k, v in asdict(self).items() if k != "threads"}
        return hashlib.sha256(yaml.safe_dump(ident, sort_keys=True).encode()).hexdigest()[:16]

    def resolve_mechanism(self):
        return _resolve_mechanism_dict(self.mechanism)

    def path_config(self):
        return PathConfig(h=self.h, delta=self.delta, horizon=self.horizon,
                          seed=self.seed)


def _resolve_mechanism_dict(spec: dict):
    if "catalog" in spec:
        entry = get_entry(spec["catalog"])
        return entry.mechanism, entry
    return mechanism_from_dict(spec), None


def _mechanism_from_args(args):
    if getattr(args, "catalog", None):
        entry = get_entry(args.catalog)
        return entry.mechanism, entry
    if getattr(args, "mechanism", None):
        try:
            spec = yaml.safe_load(args.mechanism)
            if not isinstance(spec, dict):
                raise MechanismError(f"inline mechanism must be a mapping, got {spec!r}")
        except yaml.YAMLError as exc:
            raise MechanismError(f"cannot parse inline mechanism: {exc}") from exc
        return _resolve_mechanism_dict(spec)
    raise MechanismError("provide --catalog NAME or --mechanism '<inline yaml/json>'")


def _header(digest, seed):
    return [f"# csbplab {__version__}", f"# config-digest: {digest}", f"# seed: {seed}"]


def _write(path: Path, lines):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def cmd_classify(args):
    mech, _ = _mechanism_from_args(args)
    rep = classify(mech)
    pred = predict_regime(mech, args.x, report=rep)
    rows = [
        ("variation", rep.variation.value),
        ("D", "" if rep.D is None else f"{rep.D:.12g}"),
        ("psi_prime_0", f"{rep.psi_prime_0:.12g}"),
        ("gamma", f"{rep.gamma:.12g}"),
        ("conservative", rep.conservative),
        ("persistent", rep.persistent),
        ("xlogx_finite", rep.xlogx_finite),
        ("pi_01_finite", rep.pi_01_finite),
        ("criticality", rep.criticality.value),
    ]
    width = max(len(k) for k, _ in rows)
    print(f"mechanism: {mech.name or '<inline>'}   (x = {args.x:g})")
    for k, v in rows:
        print(f"  {k:<{width}}  {v}")
    print("predicted limit structure:")
    for ev_name, ev in pred.as_dict().items():
        mean = f"  mean={ev.get('mean'):.6g}" if "mean" in ev else ""
        print(f"  {ev_name}: p={ev['probability']:.6g}  {ev['outcome']}{mean}")
    doc = {"classification": {k: (v if not hasattr(v, "value") else v.value)
                              for k, v in rows},
           "prediction": pred.as_dict()}
    print("---")
    print(yaml.safe_dump(doc, sort_keys=False).rstrip())
    return 0


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------


def cmd_flow(args):
    mech, _ = _mechanism_from_args(args)
    ev = FlowEvaluator(mech)
    try:
        val = ev.u(args.t, args.lam)
    except FlowDomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    defect = ev.residual(args.t, args.lam, val) if 0 < val < math.inf else float("nan")
    print(f"u({args.t:g}, {args.lam:g}) = {val!r}")
    print(f"integral-equation defect: {defect:.3e}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _run_one(cfg: ExperimentConfig, mech, report, run_idx, seed_seq):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    snaps = cfg.snapshots or [cfg.horizon / 2, 3 * cfg.horizon / 4, cfg.horizon]
    pc = cfg.path_config()
    if cfg.simulator == "blocks":
        traj = simulate_blocks(mech, cfg.x, cfg.n_blocks, pc, rng,
                               snap_times=snaps, report=report)
    elif cfg.simulator == "fv-poisson":
        traj = simulate_fv_poisson(mech, cfg.x, cfg.horizon, cfg.eps, pc, rng,
                                   snap_times=snaps, report=report)
    elif cfg.simulator == "iv-cluster":
        traj = simulate_iv_cluster(mech, cfg.x, cfg.s0, cfg.eps, pc, rng,
                                   snap_times=[t for t in snaps if t >= cfg.s0],
                                   report=report)
    else:
        raise MechanismError(f"unknown simulator {cfg.simulator!r}")
    rep = detect_limit(traj, floor=cfg.floor, eta=cfg.eta)
    return dump_rows(run_idx, traj), rep


def cmd_simulate(args):
    cfg = ExperimentConfig.from_yaml(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if cfg.runs < 1:
        print("error: run count must be at least 1", file=sys.stderr)
        return 2
    mech, _ = cfg.resolve_mechanism()
    report = classify(mech)
    pred = predict_regime(mech, cfg.x, report=report)
    out = Path(args.out or "csbplab-out")
    digest = cfg.digest()

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.runs)
    results = [None] * cfg.runs

    def work(i):
        results[i] = _run_one(cfg, mech, report, i, seeds[i])

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            list(pool.map(work, range(cfg.runs)))
    else:
        for i in range(cfg.runs):
            work(i)

    traj_lines = _header(digest, cfg.seed) + [DUMP_HEADER]
    settler_lines = _header(digest, cfg.seed) + [
        "run\teve_finite_time\teve\tdust\tn_settlers\tresidual\tsettlers"]
    outcome_counts: dict = {}
    for i, (rows, rep) in enumerate(results):
        traj_lines.extend(rows)
        settlers = ";".join(f"{loc:.9g}:{f:.9g}" for loc, f in rep.settlers)
        eve = "" if rep.eve is None else f"{rep.eve:.9g}"
        settler_lines.append(
            f"{i}\t{int(rep.eve_finite_time)}\t{eve}\t{rep.dust:.9g}\t"
            f"{rep.n_settlers}\t{rep.residual:.9g}\t{settlers}")
        key = _outcome_tag(rep)
        outcome_counts[key] = outcome_counts.get(key, 0) + 1

    _write(out / "trajectories.tsv", traj_lines)
    _write(out / "settlers.tsv", settler_lines)
    cfg_echo = {k: v for k, v in yaml.safe_load(cfg.to_yaml()).items() if k != "threads"}
    summary = {
        "tool": f"csbplab {__version__}",
        "config_digest": digest,
        "config": cfg_echo,
        "prediction": pred.as_dict(),
        "outcome_counts": dict(sorted(outcome_counts.items())),
    }
    _write(out / "summary.yaml", _header(digest, cfg.seed)
           + [yaml.safe_dump(summary, sort_keys=False).rstrip()])
    print(f"wrote {out}/trajectories.tsv, settlers.tsv, summary.yaml")
    return 0


def _outcome_tag(rep):
    if rep.eve_finite_time:
        return "eve-finite-time"
    if rep.eve is not None:
        return "eve"
    dust = rep.dust > 1e-3
    return ("dust+" if dust else "nodust+") + f"settlers[{min(rep.n_settlers, 99)}]"


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args):
    if args.suite not in SUITES:
        print(f"error: unknown suite {args.suite!r}; available: {', '.join(SUITES)}",
              file=sys.stderr)
        return 2
    mech, entry = _mechanism_from_args(args)
    out = Path(args.out or "csbplab-out")
    seed = args.seed if args.seed is not None else 0
    cfg = SuiteConfig(x=args.x, seed=seed)
    if args.runs:
        cfg.n_runs = args.runs
    digest = hashlib.sha256(
        yaml.safe_dump({"suite": args.suite, "x": args.x, "seed": seed,
                        "runs": cfg.n_runs,
                        "mechanism": mech.name or "inline"}).encode()).hexdigest()[:16]
    ev = FlowEvaluator(mech)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    rows = [TestOutcome.ROW_HEADER]
    datafiles: dict = {}

    if args.suite == "theorem12":
        res = theorem12_suite(
            mech, args.x, cfg, flow=ev,
            v_inverse=entry.exact_v_inv if entry else None,
            kappa_inverse=entry.exact_kappa_inv if entry else None)
        rows += [r.row() for r in res]
    elif args.suite == "extinction":
        curve = extinction_curve(mech, args.x, [0.5, 1.0, 2.0, 4.0, 8.0],
                                 cfg.n_runs * 10, rng, flow=ev,
                                 v_inverse=entry.exact_v_inv if entry else None)
        lines = ["t\tempirical\ttheoretical\tband"]
        for r in curve:
            lines.append(f"{r['t']:g}\t{r['empirical']:.8g}\t"
                         f"{r['theoretical']:.8g}\t{r['band']:.8g}")
            rows.append(TestOutcome(
                name=f"extinction/t={r['t']:g}", statistic=r["empirical"],
                p_value=None, margin=r["band"], passed=r["pass"],
                n_samples=cfg.n_runs * 10).row())
        datafiles["extinction_curve.tsv"] = lines
    elif args.suite == "coalescence":
        t, s, theta = 1.0, 1.0, 1.0
        q = coalescence_quadrature(mech, args.x, t, s, theta, flow=ev)
        mc = mc_coalescence(mech, args.x, t, s, theta, max(cfg.n_runs, 500), 250,
                            PathConfig(), rng)
        tol = 3 * mc.se + mc.bias_estimate
        rows.append(TestOutcome(
            name="coalescence/quadrature-vs-mc", statistic=mc.estimate,
            p_value=None, margin=tol, passed=abs(mc.estimate - q) <= tol,
            n_samples=mc.n_runs, metadata={"quadrature": q}).row())
        datafiles["coalescence.tsv"] = [
            "quantity\tvalue",
            f"quadrature\t{q:.10g}",
            f"mc_estimate\t{mc.estimate:.10g}",
            f"mc_se\t{mc.se:.10g}",
            f"mc_bias\t{mc.bias_estimate:.10g}",
        ]
    else:  # grey-limits
        from .grey import limit_law, phi, renormalized_limit_samples

        rep = ev.report
        theta = min(1.0, rep.gamma / 2 if math.isfinite(rep.gamma) and rep.gamma > 0
                    else 1.0)
        law = limit_law(mech, theta, flow=ev)
        p1 = phi(mech, theta, 1.0, flow=ev)
        rows.append(TestOutcome(
            name="grey/phi-at-1", statistic=p1, p_value=None, margin=1e-9,
            passed=abs(p1 - theta) <= 1e-9, n_samples=0).row())
        samples = renormalized_limit_samples(mech, args.x, theta, [1.0, 5.0],
                                             cfg.n_runs * 10, PathConfig(), rng,
                                             flow=ev)
        lines = ["t\tmean_exp\ttarget\tthree_se"]
        for t, arr in samples.items():
            vals = np.exp(-np.minimum(arr, 700.0))
            got, se = float(vals.mean()), float(vals.std() / math.sqrt(len(vals)))
            target = math.exp(-args.x * theta)
            lines.append(f"{t:g}\t{got:.8g}\t{target:.8g}\t{3 * se:.8g}")
            rows.append(TestOutcome(
                name=f"grey/martingale-t={t:g}", statistic=got, p_value=None,
                margin=3 * se, passed=abs(got - target) <= 3 * se,
                n_samples=len(vals)).row())
        datafiles["grey_limits.tsv"] = lines

    _write(out / f"results_{args.suite}.tsv", _header(digest, seed) + rows)
    for fname, lines in datafiles.items():
        _write(out / fname, _header(digest, seed) + lines)
        _write(out / f"plot_{args.suite}.py", _plot_script(args.suite, fname))
    print(f"wrote {out}/results_{args.suite}.tsv"
          + (f" and {', '.join(datafiles)}" if datafiles else ""))
    return 0


def _plot_script(suite, datafile):
    return [
        '"""Self-contained plot for the emitted data (no package imports)."""',
        "import csv",
        "from pathlib import Path",
        "",
        "import matplotlib",
        'matplotlib.use("Agg")',
        "import matplotlib.pyplot as plt",
        "",
        "",
        "def is_num(v):",
        "    try:",
        "        float(v)",
        "        return True",
        "    except ValueError:",
        "        return False",
        "",
        "",
        f'path = Path(__file__).parent / "{datafile}"',
        'rows = [r for r in csv.reader(open(path), delimiter="\\t")',
        '        if r and not r[0].startswith("#")]',
        "header, data = rows[0], rows[1:]",
        "cols = {name: [float(r[i]) for r in data]",
        "        for i, name in enumerate(header)",
        "        if data and all(is_num(r[i]) for r in data)}",
        "x = cols.get(header[0], list(range(len(data))))",
        "for name, ys in cols.items():",
        "    if name == header[0]:",
        "        continue",
        '    plt.plot(x, ys, marker="o", label=name)',
        "plt.xlabel(header[0])",
        "plt.legend()",
        f'plt.title("{suite}")',
        f'plt.savefig(Path(__file__).parent / "{suite}.png", dpi=120)',
        f'print("wrote {suite}.png")',
    ]


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="csbplab",
                                description="continuous-state branching process laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("catalog", help="list catalog mechanisms")
    c.set_defaults(func=lambda a: (print("\n".join(catalog_names())), 0)[1])

    for name, fn in (("classify", cmd_classify), ("flow", cmd_flow)):
        q = sub.add_parser(name)
        q.add_argument("--catalog")
        q.add_argument("--mechanism", help="inline mechanism as yaml/json mapping")
        q.add_argument("-x", type=float, default=1.0)
        if name == "flow":
            q.add_argument("-t", type=float, required=True)
            q.add_argument("-l", "--lam", type=float, required=True)
        q.set_defaults(func=fn)

    s = sub.add_parser("simulate")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify")
    v.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
    v.add_argument("--catalog")
    v.add_argument("--mechanism")
    v.add_argument("-x", type=float, default=1.0)
    v.add_argument("--seed", type=int)
    v.add_argument("--runs", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UndecidableError as exc:
        print(f"undecidable: {exc}", file=sys.stderr)
        return 3
    except MechanismError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CsbplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
