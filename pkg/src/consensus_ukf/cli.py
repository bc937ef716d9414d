"""Command-line front end.

    consensus-ukf run cruise.scn --out results/ --set rng_seed=7
    consensus-ukf compare cruise.scn --seeds 0..19
    consensus-ukf validate suspension.scn

A scenario argument that is not an existing file is looked up among the
bundled presets, so ``run cruise`` and ``run cruise.scn`` both work.
Exit codes: 0 success, 2 invalid scenario, 3 divergence at runtime.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConsensusUKFError, DivergenceError, NetworkValidationError
from .scenario import PRESETS, Scenario, ScenarioError, load_scenario, preset_path
from .simnet import Setup, Trace, compare_centralized, run_scenario, setup

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3

OUT_ENV = "CONSENSUS_UKF_OUT"
DEFAULT_OUT = "results"


# --------------------------------------------------------------------------- #
# Trace CSV
# --------------------------------------------------------------------------- #


def trace_columns(trace: Trace) -> list[str]:
    k = trace.num_nodes
    cols = ["t"]
    cols += [f"x_true_{s}" for s in trace.state_names]
    cols += [f"y_node{i + 1}_{o}" for i in range(k) for o in trace.output_names]
    cols += [f"xhat_node{i + 1}_{s}" for i in range(k) for s in trace.state_names]
    cols += [f"u_{name}" for name in trace.input_names]
    cols += [f"e_node{i + 1}_{s}" for i in range(k) for s in trace.state_names]
    return cols


def trace_matrix(trace: Trace) -> np.ndarray:
    N = len(trace)
    return np.hstack([
        trace.t[:, None],
        trace.x_true,
        trace.y_meas.reshape(N, -1),
        trace.x_hat.reshape(N, -1),
        trace.u,
        trace.e.reshape(N, -1),
    ])


def write_trace_csv(trace: Trace, path) -> Path:
    """One row per sample, 17 significant digits so values round-trip exactly."""
    path = Path(path)
    data = trace_matrix(trace)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(trace))
        for row in data:
            w.writerow([f"{v:.17g}" for v in row])
    return path


def read_trace_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #


def resolve_scenario_path(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    name = path.stem if path.suffix == ".scn" else path.name
    if name in PRESETS and path.parent == Path("."):
        return preset_path(name)
    return path


def parse_seeds(text: str | None) -> list[int] | None:
    """``"a..b"`` (inclusive) or a single integer."""
    if text is None:
        return None
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def _seed_arg(text: str) -> list[int]:
    try:
        return parse_seeds(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _fail(msg: str, code: int) -> int:
    print(msg, file=sys.stderr)
    return code


def _load(args) -> Scenario:
    return load_scenario(resolve_scenario_path(args.scenario), args.set)


def _build(s: Scenario, source: str) -> Setup:
    """Static checks that need the assembled model: parameters, gains, network."""
    try:
        return setup(s)
    except ScenarioError:
        raise
    except NetworkValidationError as exc:
        raise ScenarioError([f"{source}: network: {exc.property}: {exc}"]) from None
    except ConsensusUKFError as exc:
        field = getattr(exc, "field", None)
        where = f"plant.params.{field}" if field and field != "plant" else "scenario"
        raise ScenarioError([f"{source}: {where}: {exc}"]) from None
    except ValueError as exc:
        raise ScenarioError([f"{source}: {exc}"]) from None


def _seeded(s: Scenario, seed: int) -> Scenario:
    return s.model_copy(update={"rng_seed": seed})


def _format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    cells = [[k for k in keys]] + [[_fmt(r[k]) for k in keys] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(keys))]
    return "\n".join("  ".join(c[i].rjust(widths[i]) for i in range(len(keys))) for c in cells)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def _run_one(s: Scenario, st: Setup, out: Path) -> dict:
    trace, metrics = run_scenario(s, st)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / "trace.csv")
    summary = {"scenario": s.name, "rng_seed": s.rng_seed, "n_steps": s.n_steps,
               **metrics.to_dict(trace.state_names)}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    rows = [{"node": i + 1, **{f"rmse_{n}": float(v) for n, v in zip(trace.state_names, row)}}
            for i, row in enumerate(metrics.rmse)]
    print(f"{s.name} seed={s.rng_seed} -> {out}")
    print(_format_table(rows))
    settle = metrics.settling_time
    print(f"settling_time={'never' if settle is None else f'{settle:.4g}'} "
          f"steady_state_error={metrics.steady_state_error:.4g}")
    return summary


def cmd_run(args) -> int:
    s = _load(args)
    st = _build(s, args.scenario)
    out = _out_dir(args.out)
    seeds = args.seeds
    if seeds is None:
        _run_one(s, st, out)
        return EXIT_OK
    for seed in seeds:
        ss = _seeded(s, seed)
        _run_one(ss, _build(ss, args.scenario), out / f"seed_{seed}")
    return EXIT_OK


def _compare_one(s: Scenario, out: Path) -> list[dict]:
    rep = compare_centralized(s)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(rep.consensus, out / "trace_consensus.csv")
    write_trace_csv(rep.centralized, out / "trace_centralized.csv")
    write_trace_csv(rep.isolated, out / "trace_isolated.csv")
    rows = rep.table()
    with (out / "ratios.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
    print(f"{s.name} seed={s.rng_seed} -> {out}")
    print(_format_table(rows))
    return rows


def cmd_compare(args) -> int:
    s = _load(args)
    _build(s, args.scenario)
    out = _out_dir(args.out)
    if args.seeds is None:
        _compare_one(s, out)
        return EXIT_OK
    for seed in args.seeds:
        _compare_one(_seeded(s, seed), out / f"seed_{seed}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .consensus import validate_network

    s = _load(args)
    st = _build(s, args.scenario)
    report = validate_network(st.net)
    print(f"{args.scenario}: ok ({s.plant.type}, {st.net.num_nodes} nodes, {s.n_steps} steps)")
    print(f"primitive: yes (Pi^{report.exponent} > 0)")
    print("perron vector: " + " ".join(f"{v:.17g}" for v in report.perron_vector))
    print(f"second eigenvalue modulus: {report.second_eigenvalue_modulus:.6g}")
    if st.law is not None:
        print("K = " + " ".join(f"{v:.6g}" for v in st.law.K)
              + (f", Ki = {st.law.Ki:.6g}" if st.law.Ki else "")
              + f", Nbar = {st.law.Nbar:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="consensus-ukf",
                                description="Consensus unscented Kalman filter network simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_out=True):
        sp.add_argument("scenario", help="scenario file or bundled preset name")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. network.l=0 (repeatable)")
        if with_out:
            sp.add_argument("--out", default=None,
                            help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
            sp.add_argument("--seeds", type=_seed_arg, default=None, metavar="A..B",
                            help="run every seed in the inclusive range, one subdirectory each")

    common(sub.add_parser("run", help="simulate one scenario and write trace.csv and metrics.json"))
    common(sub.add_parser("compare", help="consensus vs centralized vs isolated filtering"))
    common(sub.add_parser("validate", help="static validation and network primitivity report"),
           with_out=False)
    return p


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        return _fail("\n".join(exc.diagnostics), EXIT_INVALID)
    except DivergenceError as exc:
        return _fail(f"diverged at step {exc.step}: {exc}", EXIT_DIVERGED)


if __name__ == "__main__":
    sys.exit(main())
