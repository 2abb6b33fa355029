"""``nlhelm`` command line: run sweeps, print tables, dump fields."""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import experiments


def _run(args):
    cfg = experiments.load_config(args.config)
    result = experiments.run_experiment(cfg, jobs=args.jobs)
    experiments.write_results(result, args.out)
    print(experiments.render_table(result.rows))
    for r in result.rows:
        if r.status != "ok":
            print(f"h={r.h!r}: {r.message}", file=sys.stderr)
    return 1 if result.failed else 0


def _table(args):
    rows = experiments.read_errors(args.input)
    print(experiments.render_table(rows))
    return 1 if any(r.status != "ok" for r in rows) else 0


def _field(args):
    x, vals, classes = experiments.load_field(args.input, args.h)
    names = {0: "interior", 1: "pml", 2: "boundary"}
    w = csv.writer(sys.stdout)
    if x.ndim == 1:
        w.writerow(["x", "re", "im", "class"])
        for xi, v, c in zip(x, vals, classes):
            w.writerow([repr(float(xi)), repr(float(v.real)), repr(float(v.imag)), names[int(c)]])
    else:
        w.writerow(["x", "y", "re", "im", "class"])
        for (xi, yi), v, c in zip(np.asarray(x, float), vals, classes):
            w.writerow([repr(float(xi)), repr(float(yi)), repr(float(v.real)), repr(float(v.imag)), names[int(c)]])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="nlhelm", description="Nonlocal Helmholtz solver with PML truncation")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a convergence sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=None, help="concurrent sweep entries")
    r.set_defaults(func=_run)
    t = sub.add_parser("table", help="print the convergence table of a finished run")
    t.add_argument("--in", dest="input", required=True)
    t.set_defaults(func=_table)
    f = sub.add_parser("field", help="dump a saved nodal field as CSV")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--h", type=float, required=True)
    f.set_defaults(func=_field)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"nlhelm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
