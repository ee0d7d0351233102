"""Command-line entry point: ``loopreg <subcommand> [options]``.

Every run prints a reproducibility header (version, materialised config,
seed) before its result.  Exit codes: 0 success, 1 failed verification,
2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from fractions import Fraction

from . import __version__
from .symbolic import (
    Degree,
    Forest,
    LinComb,
    TreeSyntaxError,
    basis_text,
    lincomb_to_json,
    parse_forest,
    parse_tree,
    to_text,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def decimal_coeff(c) -> str:
    """Integers as ``n``, terminating fractions as decimals, others as ``p/q``."""
    c = Fraction(c)
    if c.denominator == 1:
        return str(c.numerator)
    d = c.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d == 1:
        digits = 0
        while (c * 10**digits).denominator != 1:
            digits += 1
        return f"{float(c):.{digits}f}"
    return f"{c.numerator}/{c.denominator}"


def lincomb_display(lc: LinComb) -> str:
    if lc.is_zero():
        return "0"
    items = lc.sorted_items()
    if all(hasattr(b, "degree") for b, _ in items):
        # lowest degree first, so the tree being renormalised leads
        items = sorted(items, key=lambda bc: bc[0].degree)
    return " + ".join(f"{decimal_coeff(c)}·{basis_text(b)}" for b, c in items)


class Output:
    """Collects the result and renders it with the header in the chosen format."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.fmt = args.format
        self.config = config_of(args)
        self.lines: list[str] = []
        self.payload: dict = {}
        self.notes: list[str] = []

    def header_lines(self) -> list[str]:
        return [
            f"# loopreg {__version__}",
            f"# config {json.dumps(self.config, sort_keys=True)}",
            f"# seed {self.args.seed}",
        ]

    def note(self, text: str) -> None:
        self.notes.append(text)

    def render(self) -> str:
        if self.fmt == "json":
            doc = {"header": {"version": __version__, "config": self.config, "seed": self.args.seed}}
            doc["result"] = self.payload
            if self.notes:
                doc["notes"] = self.notes
            return json.dumps(doc, sort_keys=True, indent=1) + "\n"
        out = self.header_lines() + [f"# note: {n}" for n in self.notes] + self.lines
        return "\n".join(out) + "\n"


def csv_lines(header: list[str], rows: list[list]) -> list[str]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().rstrip("\n").split("\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_of(args: argparse.Namespace) -> dict:
    skip = {"func", "in_path"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# parsing helpers


def parse_degree(text: str) -> Degree:
    try:
        return Degree.parse(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad degree {text!r}: {exc}") from None


def parse_dyadic_range(text: str) -> list[int]:
    """``"2^-1..2^-5"`` -> ``[1, 2, 3, 4, 5]``, the ``j`` with ``lambda = 2^-j``."""
    try:
        lo, hi = text.split("..")
        a = int(lo.strip().replace("2^", ""))
        b = int(hi.strip().replace("2^", ""))
    except ValueError:
        raise UsageError(f"bad dyadic range {text!r}; expected 2^-a..2^-b") from None
    step = 1 if b >= a else -1
    return [-e for e in range(a, b + step, step)]  # positive j with lambda = 2^-j


def parse_character(items: list[str], algebra: str):
    from .hopf import Character

    values = {}
    for item in items:
        for part in item.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise UsageError(f"character entry {part!r} is not generator=rational")
            gen, val = part.rsplit("=", 1)
            try:
                values[parse_tree(gen.strip())] = Fraction(val.strip())
            except (ValueError, ZeroDivisionError) as exc:
                raise UsageError(f"bad character entry {part!r}: {exc}") from None
    return Character(algebra, values)


def parse_points(text: str) -> list[tuple[float, float]]:
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        body = chunk.strip("()")
        try:
            t, x = (float(v) for v in body.split(","))
        except ValueError:
            raise UsageError(f"bad point {chunk!r}; expected (t,x)") from None
        pts.append((t, x))
    if not pts:
        raise UsageError("no points given")
    return pts


def parse_grid(text: str | None):
    from .numeric import GridSpec

    if text is None:
        return None
    try:
        nx, dt, horizon = text.split(",")
        return GridSpec(int(nx), float(dt), float(horizon))
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, out: Output) -> int:
    from .structure import generate

    idx = generate(args.m, parse_degree(args.gamma_max), closure=not args.strict, budget=args.budget)
    data = idx.to_json()
    data["header"] = {"version": __version__, "config": out.config, "seed": args.seed}
    text = json.dumps(data, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    out.payload = {"size": len(idx), "out": args.out}
    out.lines = [f"generated {len(idx)} elements (m={args.m}, gamma_max={idx.gamma_max})"]
    if not args.out:
        out.lines.append(text.rstrip("\n"))
    return EXIT_OK


def _load_index(args):
    from .structure import StructureIndex, generate

    if getattr(args, "index", None):
        with open(args.index, encoding="utf-8") as fh:
            return StructureIndex.from_json(json.load(fh))
    return generate(args.m, parse_degree(args.gamma_max), closure=not args.strict)


def cmd_dims(args, out: Output) -> int:
    from .structure import CONVENTIONS, count_negative, dims_table

    if args.table:
        rows = [[label, n] for label, n in dims_table()]
        out.lines = csv_lines(["label", "count"], rows)
        out.payload = {"table": {label: n for label, n in rows}}
        if 71 not in {n for _, n in rows}:
            out.note("no convention in the table yields 71 negative generators")
        return EXIT_OK
    if not args.negative:
        raise UsageError("dims needs --negative or --table")
    convs = CONVENTIONS if args.conventions == "all" else tuple(args.conventions.split(","))
    idx = _load_index(args)
    try:
        counts = count_negative(idx, convs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out.lines = csv_lines(["convention", "count"], [[c, n] for c, n in counts.items()])
    out.payload = {"counts": counts}
    return EXIT_OK


def _tree_arg(text: str):
    return parse_tree(text)


def cmd_coproduct(args, out: Output) -> int:
    from .hopf import coproduct_minus, coproduct_plus

    if args.plus == args.minus:
        raise UsageError("choose exactly one of --plus / --minus")
    if args.plus:
        mode = args.mode or "T"
        lc = coproduct_plus(_tree_arg(args.tree), mode)
    else:
        mode = args.mode or "T"
        x = parse_forest(args.tree) if mode == "T-" else _tree_arg(args.tree)
        lc = coproduct_minus(x, mode, args.extended)
    out.lines = [lincomb_display(lc)]
    out.payload = {"lincomb": lincomb_to_json(lc)}
    return EXIT_OK


def cmd_antipode(args, out: Output) -> int:
    from .hopf import antipode_minus, antipode_plus, twisted_antipode_minus, twisted_antipode_plus

    if args.plus == args.minus:
        raise UsageError("choose exactly one of --plus / --minus")
    if args.plus:
        u = _tree_arg(args.tree)
        lc = twisted_antipode_plus(u) if args.twisted else antipode_plus(u)
    else:
        phi = parse_forest(args.tree) if args.tree.strip().startswith("{") else Forest([_tree_arg(args.tree)])
        lc = twisted_antipode_minus(phi) if args.twisted else antipode_minus(phi)
    out.lines = [lincomb_display(lc)]
    out.payload = {"lincomb": lincomb_to_json(lc)}
    return EXIT_OK


def cmd_renormalise(args, out: Output) -> int:
    from .hopf import MINUS, action_Mg

    g = parse_character(args.char or [], MINUS)
    lc = action_Mg(g, _tree_arg(args.tree), args.extended)
    out.lines = [lincomb_display(lc)]
    out.payload = {"lincomb": lincomb_to_json(lc)}
    return EXIT_OK


def cmd_hopf_check(args, out: Output) -> int:
    from .hopf import hopf_laws, plain_cointeraction_witness, run_laws

    idx = _load_index(args)
    cutoff = parse_degree(args.cutoff)
    laws = hopf_laws(idx.basis, cutoff, args.extended)
    deadline = None if args.time_limit is None else time.monotonic() + args.time_limit
    reports = run_laws(laws, progress=lambda r: progress(f"{r.name}: {r.checked}/{r.total}"), deadline=deadline)
    status = EXIT_OK
    rows = []
    for r in reports:
        verdict = "pass" if r.ok else ("fail" if r.failure is not None else "incomplete")
        rows.append([r.name, r.checked, r.total, verdict])
        if r.failure is not None:
            status = EXIT_FAIL
            out.note(f"witness for {r.name}: {_witness_text(r.failure.witness)}")
        elif not r.ok:
            status = EXIT_FAIL
    checked_names = {r.name for r in reports}
    for name, _, items in laws:
        if name not in checked_names:
            rows.append([name, 0, len(items), "not run"])
            status = EXIT_FAIL
    if args.plain_witness:
        res = plain_cointeraction_witness(idx.basis, cutoff)
        if res is None:
            rows.append(["plain cointeraction failure", 0, 0, "none found"])
        else:
            rows.append(["plain cointeraction failure", 1, 1, "found"])
            out.note(f"plain-mode witness: {_witness_text(res.witness)}")
    out.lines = csv_lines(["law", "checked", "total", "verdict"], rows)
    out.payload = {"laws": [dict(zip(["law", "checked", "total", "verdict"], r)) for r in rows]}
    return status


def _witness_text(w) -> str:
    if isinstance(w, tuple) and len(w) == 3:
        tau, b, c = w
        return f"element {basis_text(tau)}: term {decimal_coeff(c)}·{basis_text(b)}"
    return str(w)


def cmd_bphz_estimate(args, out: Output) -> int:
    from .numeric import KernelSpec, bphz_character, character_oracle, estimate_gminus, moment_oracle, shallow_factors

    tau = _tree_arg(args.tree)
    kernel = KernelSpec(args.kernel_radius)
    grid = parse_grid(args.grid)
    shallow = shallow_factors(tau) is not None
    if args.character:
        ch = bphz_character(args.eps, args.samples, [tau], args.seed, kernel, grid)
        mean, se = ch.value(tau), ch.error(tau)
        orc = character_oracle(tau, args.eps, kernel) if _all_shallow(tau) else None
    else:
        est = estimate_gminus(tau, args.eps, args.samples, args.seed, kernel, grid)
        mean, se = est.mean, est.stderr
        orc = moment_oracle(tau, args.eps, kernel) if shallow else None
    oracle = (orc.value, orc.error) if orc is not None else (math.nan, math.nan)
    row = [to_text(tau), args.eps, float(mean), float(se), oracle[0], oracle[1]]
    header = ["tree", "eps", "mean", "stderr", "oracle", "oracle_err"]
    out.lines = csv_lines(header, [row])
    out.payload = dict(zip(header, row))
    return EXIT_OK


def _all_shallow(tau) -> bool:
    from .hopf import twisted_antipode_minus
    from .numeric import shallow_factors

    for phi, _ in twisted_antipode_minus(Forest([tau])).sorted_items():
        if any(shallow_factors(t) is None for t in phi.trees):
            return False
    return True


def cmd_scaling(args, out: Output) -> int:
    from .hopf import MINUS, Character
    from .numeric import KernelSpec, bphz_character, scaling_sweep

    tau = _tree_arg(args.tree)
    kernel = KernelSpec(args.kernel_radius)
    grid = parse_grid(args.grid)
    lambdas = [2.0**-j for j in parse_dyadic_range(args.lambdas)]
    g = None
    if args.renormalised:
        negs = [t for t in _negative_subtrees(tau)]
        ch = bphz_character(args.eps, args.char_samples, negs, args.seed, kernel, grid)
        g = Character(MINUS, dict(ch.character.values))
    rows, slope = scaling_sweep(tau, lambdas, args.eps, args.samples, args.seed, g=g, kernel=kernel, grid=grid)
    out.lines = csv_lines(["lambda", "second_moment", "stderr"], [[r.lam, r.second_moment, r.stderr] for r in rows])
    out.lines.append(f"# slope {slope!r}")
    out.payload = {
        "rows": [{"lambda": r.lam, "second_moment": r.second_moment, "stderr": r.stderr} for r in rows],
        "slope": slope,
    }
    return EXIT_OK


def _negative_subtrees(tau):
    """Negative trees appearing as left factors of the negative coproduct of ``tau``."""
    from .hopf import delta_minus

    seen = set()
    for (phi, _), _ in delta_minus(tau).sorted_items():
        for t in phi.trees:
            if t.degree < Degree() and t not in seen:
                seen.add(t)
    return sorted(seen, key=lambda t: (t.degree, t.key))


def cmd_multiscale(args, out: Output) -> int:
    from . import multiscale as ms

    if args.action == "cluster":
        if not args.points:
            raise UsageError("cluster needs --points")
        try:
            tree = ms.cluster(parse_points(args.points))
        except ms.ConfigurationError as exc:
            raise UsageError(str(exc)) from None
        data = tree.to_json()
        out.lines = tree.to_text().split("\n") + [json.dumps(data, sort_keys=True)]
        out.payload = data
        return EXIT_OK
    if not args.tree_shape or not args.eta:
        raise UsageError("sum needs --tree-shape and --eta")
    try:
        shape = ms.parse_shape(args.tree_shape)
        eta = ms.eta_from_csv(shape, args.eta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    exps = parse_dyadic_range(args.lambda_range)
    c1, c2 = ms.check_sum_conditions(shape, eta)
    sweep = ms.lambda_sweep(shape, eta, exps)
    rows = [[lam, 2.0**v] for lam, v in zip(sweep.lambdas, sweep.log2_values)]
    out.lines = csv_lines(["lambda", "value"], rows)
    out.lines.append(f"# slope {sweep.scale_slope!r} (log2 value against j, lambda = 2^-j)")
    out.lines.append(f"# slope_log2_lambda {sweep.slope!r}")
    out.lines.append(f"# condition1 {c1} condition2 {c2} converged {sweep.converged}")
    out.payload = {
        "rows": [{"lambda": a, "value": b} for a, b in rows],
        "slope": sweep.scale_slope,
        "slope_log2_lambda": sweep.slope,
        "condition1": c1,
        "condition2": c2,
        "converged": sweep.converged,
    }
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parser


def _common_options(top_level: bool) -> argparse.ArgumentParser:
    # subcommands repeat the options with suppressed defaults so a value
    # given before the subcommand is not overwritten
    def d(value):
        return value if top_level else argparse.SUPPRESS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(0))
    common.add_argument(
        "--workers", type=int, default=d(1), help="accepted for interface compatibility; runs are serial"
    )
    common.add_argument("--format", choices=("text", "json", "csv"), default=d("text"))
    common.add_argument("--in", dest="in_path", default=d(None), help="rerun the config stored in a JSON artifact")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options(top_level=False)
    p = argparse.ArgumentParser(prog="loopreg", parents=[_common_options(top_level=True)])
    sub = p.add_subparsers(dest="command")

    def add(name, func, **kw):
        sp = sub.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        return sp

    def index_opts(sp, gamma_default="3/2"):
        sp.add_argument("--index", default=None)
        sp.add_argument("--m", type=int, default=1)
        sp.add_argument("--gamma-max", default=gamma_default)
        sp.add_argument("--strict", action="store_true", help="skip closure under X^k multiplication")

    sp = add("generate", cmd_generate)
    sp.add_argument("--m", type=int, default=1)
    sp.add_argument("--gamma-max", default="3/2")
    sp.add_argument("--strict", action="store_true")
    sp.add_argument("--budget", type=int, default=200_000)
    sp.add_argument("--out", default=None)

    sp = add("dims", cmd_dims)
    index_opts(sp, gamma_default="0")
    sp.add_argument("--negative", action="store_true")
    sp.add_argument("--conventions", default="all")
    sp.add_argument("--table", action="store_true", help="golden table for m = 1, 2, 3 in both closure modes")

    for name, func in (("coproduct", cmd_coproduct), ("antipode", cmd_antipode)):
        sp = add(name, func)
        sp.add_argument("--plus", action="store_true")
        sp.add_argument("--minus", action="store_true")
        sp.add_argument("--tree", required=True)
        if name == "coproduct":
            sp.add_argument("--extended", action="store_true")
            sp.add_argument("--mode", choices=("T", "T+", "T-", "hatT+"), default=None)
        else:
            sp.add_argument("--twisted", action="store_true")

    sp = add("renormalise", cmd_renormalise)
    sp.add_argument("--tree", required=True)
    sp.add_argument("--char", action="append", default=None)
    sp.add_argument("--extended", action="store_true")

    sp = add("hopf-check", cmd_hopf_check)
    index_opts(sp)
    sp.add_argument("--cutoff", default="1")
    sp.add_argument("--extended", action="store_true")
    sp.add_argument("--plain-witness", action="store_true")
    sp.add_argument("--time-limit", type=float, default=None, help="seconds; unfinished laws count as failures")

    sp = add("bphz-estimate", cmd_bphz_estimate)
    sp.add_argument("--tree", required=True)
    sp.add_argument("--eps", type=float, default=0.125)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--grid", default=None, help="Nx,dt,T for the grid estimator")
    sp.add_argument("--kernel-radius", type=float, default=1.0)
    sp.add_argument("--character", action="store_true", help="report g^eps(tree) instead of E Pi tree (0)")

    sp = add("scaling", cmd_scaling)
    sp.add_argument("--tree", required=True)
    sp.add_argument("--lambdas", default="2^-1..2^-4")
    sp.add_argument("--eps", type=float, default=2.0**-7)
    sp.add_argument("--samples", type=int, default=500)
    sp.add_argument("--renormalised", action="store_true")
    sp.add_argument("--char-samples", type=int, default=1000)
    sp.add_argument("--grid", default=None)
    sp.add_argument("--kernel-radius", type=float, default=1.0)

    sp = add("multiscale-demo", cmd_multiscale)
    sp.add_argument("action", choices=("cluster", "sum"))
    sp.add_argument("--points", default=None)
    sp.add_argument("--tree-shape", default=None)
    sp.add_argument("--eta", default=None)
    sp.add_argument("--lambda-range", default="2^-2..2^-7")
    return p


COMMANDS = {
    "generate": cmd_generate,
    "dims": cmd_dims,
    "coproduct": cmd_coproduct,
    "antipode": cmd_antipode,
    "renormalise": cmd_renormalise,
    "hopf-check": cmd_hopf_check,
    "bphz-estimate": cmd_bphz_estimate,
    "scaling": cmd_scaling,
    "multiscale-demo": cmd_multiscale,
}


def _rerun_args(path: str) -> argparse.Namespace:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = dict(doc["header"]["config"])
    if cfg.get("command") not in COMMANDS:
        raise UsageError(f"{path} does not record a known subcommand")
    return argparse.Namespace(**cfg, func=COMMANDS[cfg["command"]], in_path=None)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.in_path:
            args = _rerun_args(args.in_path)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        out = Output(args)
        status = args.func(args, out)
    except (UsageError, TreeSyntaxError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(out.render())
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
