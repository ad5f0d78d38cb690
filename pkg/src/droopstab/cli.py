"""Command-line driver.

Every run writes its artifacts and a ``manifest.json`` into
``<out>/<config-hash>-<command>/``; ``<out>`` defaults to
``$DROOPSTAB_CACHE_DIR`` or ``./droopstab-runs``.  The operating point and
eigensolutions are cached under ``<out>/cache/<config-hash>/``.

Slopes on the command line and in tables are in MW/kV.

Exit codes: 0 success, 1 other failure, 2 configuration error,
3 convergence failure, 4 infeasible expansion point.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioEvent, config_hash, load_config, load_slopes, validate
from .dynamics import ConvergenceError, OperatingPoint, simulate, simulate_linear
from .modal import eig_full
from .pipeline import SlopeStudy
from .region import (
    InfeasibleExpansionError,
    NoSignChangeError,
    cross_validate,
    estimate_supremum,
    loci_supremum,
    region_agreement,
    scan_region,
)

log = logging.getLogger("droopstab")

SLOPE_UNIT = 1e3  # W/V per MW/kV
EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


# ---------------------------------------------------------------------------
# run bookkeeping


class Run:
    """Output directory plus manifest for one invocation."""

    def __init__(self, root: Path, chash: str, command: str, argv: Sequence[str]):
        self.dir = root / f"{chash}-{command.replace(' ', '-')}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.manifest = {
            "command_line": list(argv),
            "command": command,
            "config_hash": chash,
            "tool_version": __version__,
            "started": _now(),
        }

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")
        return p

    def write_csv(self, name: str, header: Sequence[str], rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        return p

    def close(self, status: int) -> None:
        self.manifest.update(finished=_now(), exit_code=status, outputs=sorted(set(self.outputs)))
        (self.dir / "manifest.json").write_text(json.dumps(self.manifest, indent=2) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("DROOPSTAB_CACHE_DIR", "droopstab-runs"))


class CachedStudy(SlopeStudy):
    """:class:`SlopeStudy` whose operating point and eigensolutions persist on disk."""

    def __init__(self, config, cache_dir: Path, **kw):
        super().__init__(config, **kw)
        self.cache_dir = cache_dir

    @property
    def operating_point(self) -> OperatingPoint:  # type: ignore[override]
        if "_op" in self.__dict__:
            return self.__dict__["_op"]
        from .dynamics import equation_residual, solve_equilibrium

        f = self.cache_dir / "equilibrium.npz"
        op = None
        if f.exists():
            data = np.load(f)
            grid = self.grid
            x = data["x"]
            if x.shape == (grid.n_states,):
                res = equation_residual(grid, x, grid.setpoints, grid.state_scales())
                if res < 1e-8:
                    op = OperatingPoint(x=x, setpoints=grid.setpoints, residual_norm=res, method="cache")
        if op is None:
            op = solve_equilibrium(self.grid)
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            np.savez(f, x=op.x)
        self.__dict__["_op"] = op
        return op

    def eigen(self, k):
        key = "eig-" + "-".join(f"{v:.9g}" for v in np.asarray(k) / SLOPE_UNIT)
        f = self.cache_dir / f"{key}.npz"
        if f.exists():
            return np.load(f)["values"]
        values = eig_full(self.state_matrix(k)).values
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        np.savez(f, values=values)
        return values


# ---------------------------------------------------------------------------
# argument helpers


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must be lo:hi, got {text!r}") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("range needs lo < hi")
    return lo, hi


def _case_slopes(study: SlopeStudy, path: str | None) -> np.ndarray:
    if path is None:
        return study.k_nominal
    return np.array(load_slopes(path, study.axes))


def _axis(study: SlopeStudy, name: str) -> int:
    if name not in study.axes:
        raise ConfigError(f"unknown droop axis {name!r}; available {list(study.axes)}", "--axis")
    return study.axes.index(name)


def _mode_info(cs, mode):
    if mode is None:
        return None
    lam = next(c.eigenvalue for c in cs.constraints if c.mode == mode)
    return {"index": int(mode), "eigenvalue": [lam.real, lam.imag]}


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args, study, run):
    v = validate(study.config)
    print(f"states: {v.state_dim}, droop axes: {len(v.droop_nodes)}")
    print("axes: " + ", ".join(study.axes))
    run.write_json("validate.json", {"states": v.state_dim, "axes": list(study.axes), "config_hash": run.manifest["config_hash"]})
    return EXIT_OK


def cmd_equilibrium(args, study, run):
    op = study.operating_point
    g = study.grid
    v = op.v_dc(g)
    run.write_json(
        "equilibrium.json",
        {
            "residual": op.residual_norm,
            "method": op.method,
            "iterations": op.iterations,
            "v_dc": dict(zip(g.config.nodes, v)),
        },
    )
    run.write_csv("state.csv", ["state", "value"], zip(g.state_names, op.x))
    print(f"equilibrium: residual {op.residual_norm:.3g} ({op.method}), v_dc {v.min() / 1e3:.2f}..{v.max() / 1e3:.2f} kV")
    return EXIT_OK


def cmd_sim(args, study, run):
    g = study.grid
    op = study.operating_point
    events = list(g.config.scenario)
    for spec in args.step or ():
        try:
            t, target, value = spec.split(",")
            events.append(ScenarioEvent(time=float(t), target=target, value=float(value) * (SLOPE_UNIT if target.endswith(".k") else 1e6)))
        except ValueError:
            raise ConfigError(f"--step expects t,node.field,value; got {spec!r}", "--step") from None
    fn = simulate_linear if args.linear else simulate
    traj = fn(g, op, events, t_end=args.t_end, h=args.dt)
    names, table = traj.channel_table()
    run.write_csv("trajectory.csv", names, table.tolist())
    run.write_json("sim.json", {"kind": traj.kind, "diverged": traj.diverged, "samples": int(traj.t.size), "t_end": float(traj.t[-1])})
    print(f"{traj.kind} simulation: {traj.t.size} samples to t={traj.t[-1]:.3f} s, diverged={traj.diverged}")
    return EXIT_OK


def cmd_model_dump(args, study, run):
    m = study.model
    k = _case_slopes(study, args.at_case)
    np.savez(run.path("model.npz"), A_ss=m.at(k), A0=m.A0, M=np.stack(m.M), k=k, state_names=np.array(m.state_names))
    print(f"model: {m.n_states} states, axes {', '.join(m.axes)}")
    return EXIT_OK


def cmd_network_dump(args, study, run):
    net = study.grid.network
    np.savez(run.path("network.npz"), J=net.incidence.J, A3=net.A3, B3=net.B3, E=net.E, state_names=np.array(net.state_names))
    print(f"network: {net.incidence.n_nodes} nodes, {net.incidence.n_lines} lines, {net.A3.shape[0]} states")
    return EXIT_OK


def cmd_eig(args, study, run):
    k = _case_slopes(study, args.at_case)
    values = study.eigen(k)
    run.write_csv("eigenvalues.csv", ["index", "real", "imag", "margin"], [(i, v.real, v.imag, -v.real) for i, v in enumerate(values)])
    worst = values[np.argmax(values.real)]
    run.write_json("eig.json", {"count": int(values.size), "max_real": float(worst.real), "critical": [worst.real, worst.imag], "stable": bool(worst.real < 0)})
    print(f"{values.size} eigenvalues, max Re = {worst.real:.4g} at Im = {worst.imag:.4g} ({'stable' if worst.real < 0 else 'unstable'})")
    return EXIT_OK


def cmd_sens(args, study, run):
    k = _case_slopes(study, args.at_case)
    b = study.sensitivities(k)
    sol = b.solution
    np.savez(run.path("sensitivity.npz"), values=sol.values, first=b.first, second=b.second, margins=b.margins, k=k)
    rows = []
    for i in range(sol.n):
        rows.append([i, sol.values[i].real, sol.values[i].imag, b.margins[i]] + [b.first[i, j].real * SLOPE_UNIT for j in range(len(b.axes))])
    run.write_csv("first_order.csv", ["index", "real", "imag", "margin"] + [f"dRe/d{a} [1/s per MW/kV]" for a in b.axes], rows)
    run.write_json("excluded.json", {str(i): r for i, r in b.excluded.items()})
    print(f"sensitivities of {sol.n} modes to {len(b.axes)} slopes; {len(b.excluded)} modes excluded")
    return EXIT_OK


def cmd_sup(args, study, run):
    k_at = _case_slopes(study, args.at_case)
    k_exp = _case_slopes(study, args.expand_at) if args.expand_at else k_at
    cs = study.constraints(k_exp)
    axes = [_axis(study, a) for a in args.axis.split(",")] if args.axis else range(len(study.axes))
    out = []
    for i in axes:
        r = estimate_supremum(cs, i, k_at - k_exp)
        d = r.as_dict(SLOPE_UNIT)
        d["binding_mode"] = _mode_info(cs, r.binding_mode)
        out.append(d)
        print(f"{d['axis']}: sup = {d['k_sup']:.4f} MW/kV" + ("" if r.bounded else " (unbounded, capped)"))
    run.write_json("sup.json", {"unit": "MW/kV", "expansion": (k_exp / SLOPE_UNIT).tolist(), "suprema": out})
    return EXIT_OK


def cmd_loci(args, study, run):
    k_at = _case_slopes(study, args.at_case)
    i = _axis(study, args.axis)
    lo, hi = args.range if args.range else (k_at[i] / SLOPE_UNIT, 10 * max(k_at[i] / SLOPE_UNIT, 1.0) + 100)
    res = loci_supremum(study.model.reassemble, k_at, i, (lo * SLOPE_UNIT, hi * SLOPE_UNIT), samples=args.samples)
    rows = []
    for kv, lam in zip(res.table_k, res.table_eigs):
        crit = lam[np.argmax(lam.real)]
        rows.append([kv / SLOPE_UNIT, crit.real, crit.imag])
    run.write_csv("locus.csv", ["k [MW/kV]", "max_real", "imag_at_max"], rows)
    np.savez(run.path("locus.npz"), k=res.table_k, eigenvalues=res.table_eigs)
    summary = {"axis": args.axis, "k_sup": res.k_sup / SLOPE_UNIT, "max_real_at_sup": res.f_at_sup, "bisection_steps": res.iterations, "crossings": res.crossings, "unit": "MW/kV"}
    run.write_json("loci.json", summary)
    print(f"{args.axis}: loci supremum = {summary['k_sup']:.4f} MW/kV")
    return EXIT_OK


def cmd_region(args, study, run):
    k_at = _case_slopes(study, args.at_case)
    names = args.axes.split(",")
    if len(names) != 2:
        raise ConfigError("--axes takes two axis names", "--axes")
    ax = tuple(_axis(study, a) for a in names)
    r1 = args.range
    r2 = args.range2 or r1
    ranges = ((r1[0] * SLOPE_UNIT, r1[1] * SLOPE_UNIT), (r2[0] * SLOPE_UNIT, r2[1] * SLOPE_UNIT))
    grids = {}
    if args.method in ("taylor", "both"):
        grids["taylor"] = scan_region(study.constraints(k_at), ax, ranges, args.res, k_base=k_at)
    if args.method in ("loci", "both"):
        grids["loci"] = scan_region(study.model.reassemble, ax, ranges, args.res, k_base=k_at)
    for name, grid in grids.items():
        run.write_csv(f"region_{name}.csv", [f"{names[0]} [MW/kV]", f"{names[1]} [MW/kV]", "stable", "method"], grid.rows(SLOPE_UNIT))
        print(f"{name}: {int(grid.stable.sum())}/{grid.stable.size} cells stable")
    summary = {"axes": names, "resolution": args.res, "ranges_MW_per_kV": [list(r1), list(r2)]}
    if len(grids) == 2:
        summary["agreement"] = region_agreement(grids["taylor"], grids["loci"])
        print(f"agreement: {summary['agreement']['agreement'] * 100:.2f}% ({summary['agreement']['mismatches']} mismatched cells)")
    run.write_json("region.json", summary)
    return EXIT_OK


def _xval_table(study, k_a, k_b):
    cs_a, cs_b = study.constraints(k_a), study.constraints(k_b)
    self_a = [estimate_supremum(cs_a, i) for i in range(len(k_a))]
    cross_a = cross_validate(cs_b, k_a)
    self_b = [estimate_supremum(cs_b, i) for i in range(len(k_b))]
    cross_b = cross_validate(cs_a, k_b)
    rows = []
    for i, axis in enumerate(study.axes):
        for case, s, c in (("A", self_a[i], cross_a[i]), ("B", self_b[i], cross_b[i])):
            rel = abs(s.k_sup - c.k_sup) / abs(s.k_sup)
            rows.append({"axis": axis, "case": case, "self": s.k_sup / SLOPE_UNIT, "cross": c.k_sup / SLOPE_UNIT, "rel_diff": rel, "bounded": s.bounded and c.bounded})
    return rows


def cmd_xval(args, study, run):
    k_a = np.array(load_slopes(args.case_a, study.axes))
    k_b = np.array(load_slopes(args.case_b, study.axes))
    rows = _xval_table(study, k_a, k_b)
    run.write_csv("xval.csv", ["axis", "case", "self [MW/kV]", "cross [MW/kV]", "rel_diff"], [[r["axis"], r["case"], r["self"], r["cross"], r["rel_diff"]] for r in rows])
    run.write_json("xval.json", {"case_a": args.case_a, "case_b": args.case_b, "rows": rows})
    for r in rows:
        print(f"{r['axis']} case {r['case']}: self {r['self']:.4f}  cross {r['cross']:.4f}  diff {100 * r['rel_diff']:.3f}%")
    return EXIT_OK


def cmd_report(args, study, run):
    """Self/cross table plus loci suprema for both cases, side by side."""
    k_a = np.array(load_slopes(args.case_a, study.axes))
    k_b = np.array(load_slopes(args.case_b, study.axes))
    rows = _xval_table(study, k_a, k_b)
    lines = ["| axis | case | self | cross | loci | self vs loci |", "|---|---|---|---|---|---|"]
    for r in rows:
        k_at = k_a if r["case"] == "A" else k_b
        i = study.axes.index(r["axis"])
        try:
            lo = k_at[i]
            hi = max(2 * r["self"] * SLOPE_UNIT, lo + 100 * SLOPE_UNIT)
            loci = loci_supremum(study.model.reassemble, k_at, i, (lo, hi)).k_sup / SLOPE_UNIT
            gap = f"{100 * abs(r['self'] - loci) / loci:.2f}%"
        except NoSignChangeError:
            loci, gap = float("nan"), "n/a"
        r["loci"] = loci
        lines.append(f"| {r['axis']} | {r['case']} | {r['self']:.3f} | {r['cross']:.3f} | {loci:.3f} | {gap} |")
    text = "\n".join(lines) + "\n"
    run.path("report.md").write_text(text)
    run.write_json("report.json", {"unit": "MW/kV", "rows": rows})
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="droopstab", description="Droop-slope stability analysis of MMC-MTDC grids.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="system configuration (JSON)")
    common.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config entry")
    common.add_argument("--out", help="output root (default: $DROOPSTAB_CACHE_DIR or ./droopstab-runs)")
    common.add_argument("-v", "--verbose", action="store_true")
    case = argparse.ArgumentParser(add_help=False)
    case.add_argument("--at-case", help="slope case file (default: slopes in the config)")

    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a configuration").set_defaults(func=cmd_validate)
    sub.add_parser("equilibrium", parents=[common], help="solve the operating point").set_defaults(func=cmd_equilibrium)

    s = sub.add_parser("sim", parents=[common], help="time-domain simulation of the config scenario")
    s.add_argument("--t-end", type=float, default=3.0)
    s.add_argument("--dt", type=float, default=50e-6)
    s.add_argument("--linear", action="store_true", help="integrate the linearized model")
    s.add_argument("--step", action="append", metavar="T,NODE.FIELD,VALUE", help="extra step (MW, Mvar or MW/kV)")
    s.set_defaults(func=cmd_sim)

    for name, func, helptext in (("model", cmd_model_dump, "state matrices"), ("network", cmd_network_dump, "dc network matrices")):
        grp = sub.add_parser(name, help=f"{helptext} dump")
        gsub = grp.add_subparsers(dest="action", required=True)
        d = gsub.add_parser("dump", parents=[common, case] if name == "model" else [common])
        d.set_defaults(func=func)

    sub.add_parser("eig", parents=[common, case], help="eigenvalues").set_defaults(func=cmd_eig)
    sub.add_parser("sens", parents=[common, case], help="slope sensitivities").set_defaults(func=cmd_sens)

    s = sub.add_parser("sup", parents=[common, case], help="Taylor estimate of slope suprema")
    s.add_argument("--axis", help="comma-separated axes (default: all)")
    s.add_argument("--expand-at", help="case file of the expansion point (default: --at-case)")
    s.set_defaults(func=cmd_sup)

    s = sub.add_parser("loci", parents=[common, case], help="supremum from eigenvalue loci")
    s.add_argument("--axis", required=True)
    s.add_argument("--range", type=_range, help="search bracket lo:hi in MW/kV")
    s.add_argument("--samples", type=int, default=41)
    s.set_defaults(func=cmd_loci)

    s = sub.add_parser("region", parents=[common, case], help="2-D stability region")
    s.add_argument("--axes", required=True, help="two axes, e.g. k1,k2")
    s.add_argument("--range", type=_range, required=True, help="lo:hi in MW/kV for the first axis (and the second unless --range2)")
    s.add_argument("--range2", type=_range)
    s.add_argument("--res", type=int, default=50)
    s.add_argument("--method", choices=("taylor", "loci", "both"), default="taylor")
    s.set_defaults(func=cmd_region)

    for name, func, helptext in (("xval", cmd_xval, "self/cross validation"), ("report", cmd_report, "consolidated suprema table")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--case-a", required=True)
        s.add_argument("--case-b", required=True)
        s.set_defaults(func=func)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    command = args.command + (f" {args.action}" if getattr(args, "action", None) else "")
    run = None
    try:
        config = load_config(args.config, args.set)
        chash = config_hash(config)
        root = _out_root(args)
        study = CachedStudy(config, root / "cache" / chash)
        run = Run(root, chash, command, ["droopstab"] + argv)
        status = args.func(args, study, run)
    except ConfigError as exc:
        print(f"droopstab: config: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except (json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"droopstab: config: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"droopstab: dynamics: {exc}", file=sys.stderr)
        status = EXIT_CONVERGENCE
    except InfeasibleExpansionError as exc:
        print(f"droopstab: region: {exc}", file=sys.stderr)
        status = EXIT_INFEASIBLE
    except NoSignChangeError as exc:
        print(f"droopstab: region: {exc}", file=sys.stderr)
        status = EXIT_OTHER
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"droopstab: {type(exc).__module__.rsplit('.', 1)[-1]}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        status = EXIT_OTHER
    if run is not None:
        run.close(status)
        if status == EXIT_OK:
            print(f"artifacts: {run.dir}")
    return status


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
