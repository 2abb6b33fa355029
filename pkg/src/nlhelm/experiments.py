"""Experiment configs, convergence sweeps, reference solutions and result files."""
from __future__ import annotations

import ast
import csv
import hashlib
import json
import math
import operator
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytic import exact_solution_exponential
from .assembly import QuadratureError, assemble
from .grid import IndexClass, build_grid_1d, build_grid_2d
from .kernel import KernelSpec
from .solver import SolveOptions, SolverError, solve
from .sources import GaussianSource, standard_source
from .stretch import AbsorptionProfile, Stretch, StretchConfig

# ---------------------------------------------------------------------------
# config parsing

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_node(node, names):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in names:
            return names[node.id]
        raise KeyError(node.id)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left, names), _eval_node(node.right, names))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval_node(node.operand, names))
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_eval_node(e, names) for e in node.elts]
    raise ValueError(f"unsupported expression {ast.dump(node)}")


def parse_value(text, names=None):
    """Literal or arithmetic value; ``pi`` and already-set scalars such as ``k`` may appear.

    Bare words that are not known names are returned as strings.
    """
    names = {"pi": math.pi, "True": True, "False": False, **(names or {})}
    text = text.strip()
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError:
        return text
    try:
        return _eval_node(tree.body, names)
    except KeyError:
        if isinstance(tree.body, ast.Name):
            return text
        raise ValueError(f"unknown name in {text!r}") from None


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment.  ``k`` is resolved first."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        pairs.append((key, val))
    raw = {}
    names = {}
    # scalars without dots (k) first, so kernel parameters can be written as 0.9 / k
    for key, val in sorted(pairs, key=lambda kv: "." in kv[0]):
        if key in raw:
            raise ValueError(f"duplicate key {key!r}")
        raw[key] = parse_value(val, names)
        if "." not in key and isinstance(raw[key], (int, float)):
            names[key] = raw[key]
    return raw


# ---------------------------------------------------------------------------
# config types

_KNOWN_KEYS = {
    "name", "k",
    "kernel.family", "kernel.c_gamma", "kernel.delta", "kernel.s", "kernel.truncation_radius",
    "kernel.smoothed", "kernel.smoothing_tol", "kernel.smoothing_eps0",
    "pml.z_re", "pml.z_im", "pml.d_pml", "pml.style",
    "domain.shape", "domain.l", "domain.l_r",
    "grid.h", "grid.delta_b",
    "source.kind", "source.amplitude", "source.rate",
    "solver.method", "solver.tol", "solver.max_iters", "solver.restart", "solver.preconditioner",
    "solver.lumped_reach",
    "reference.mode", "reference.refinement", "reference.enlargement", "reference.solver_method",
    "assembly.order", "assembly.rtol",
    "output.fields", "run.jobs",
}

_STYLE_OF_SHAPE = {"interval": "1d", "square": "cartesian", "disk": "polar"}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    k: float
    kernel: KernelSpec
    z: complex
    d_pml: float
    shape: str
    l: float
    h_values: tuple
    delta_b: float | None
    source_kind: str
    source_amplitude: float | None
    source_rate: float | None
    solver: dict
    reference_mode: str
    refinement: int
    enlargement: float
    reference_solver: str | None
    order: int
    rtol: float
    save_fields: bool
    jobs: int
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self):
        return 1 if self.shape == "interval" else 2

    @property
    def pml_style(self):
        return _STYLE_OF_SHAPE[self.shape]

    def config_hash(self):
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def source(self):
        if self.source_kind == "zero":
            return GaussianSource(0.0, 1.0, self.dim)
        if self.source_kind == "gaussian":
            return GaussianSource(self.source_amplitude, self.source_rate, self.dim)
        return standard_source(self.source_kind, self.k)

    def stretch(self, l=None, d_pml=None):
        l = self.l if l is None else l
        d_pml = self.d_pml if d_pml is None else d_pml
        if self.z == 0:
            return Stretch(self.pml_style, None)
        cfg = StretchConfig(self.z, self.k, AbsorptionProfile(l, d_pml))
        return Stretch(self.pml_style, cfg)

    def solve_options(self, method=None):
        opts = dict(self.solver)
        if method is not None:
            opts["method"] = method
        return SolveOptions(**opts)


def _need(raw, key):
    if key not in raw:
        raise ValueError(f"missing config key {key!r}")
    return raw[key]


def _kernel_from(raw):
    fam = str(_need(raw, "kernel.family"))
    kw = {"family": fam}
    for key, arg in (("kernel.c_gamma", "c_gamma"), ("kernel.delta", "delta"), ("kernel.s", "s_order"),
                     ("kernel.truncation_radius", "truncation_radius"), ("kernel.smoothed", "smoothed"),
                     ("kernel.smoothing_tol", "smoothing_tol"), ("kernel.smoothing_eps0", "smoothing_eps0")):
        if key in raw:
            kw[arg] = raw[key]
    return KernelSpec(**kw)


def config_from_dict(raw):
    """Typed config from parsed key/value pairs, with cross-field checks."""
    unknown = sorted(set(raw) - _KNOWN_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys {unknown}")
    k = float(_need(raw, "k"))
    if k <= 0:
        raise ValueError("k must be positive")
    kernel = _kernel_from(raw)
    shape = str(raw.get("domain.shape", "interval" if kernel.dim == 1 else "square"))
    if shape not in _STYLE_OF_SHAPE:
        raise ValueError(f"unknown domain shape {shape!r}")
    dim = 1 if shape == "interval" else 2
    if kernel.dim != dim:
        raise ValueError(f"{kernel.family.value} kernel does not match a {shape} domain")
    if "domain.l" in raw and "domain.l_r" in raw:
        raise ValueError("give domain.l or domain.l_r, not both")
    if shape == "disk":
        l = float(raw.get("domain.l_r", raw.get("domain.l", 0.0)))
    else:
        if "domain.l_r" in raw:
            raise ValueError("domain.l_r applies to disk domains only")
        l = float(_need(raw, "domain.l"))
    if l <= 0:
        raise ValueError("domain size must be positive")
    style = raw.get("pml.style")
    if style is not None and style != _STYLE_OF_SHAPE[shape]:
        raise ValueError(f"{shape} domains use the {_STYLE_OF_SHAPE[shape]} PML, not {style!r}")
    z = complex(float(raw.get("pml.z_re", 0.0)), float(raw.get("pml.z_im", 0.0)))
    d_pml = float(_need(raw, "pml.d_pml"))
    hs = _need(raw, "grid.h")
    hs = tuple(float(h) for h in (hs if isinstance(hs, list) else [hs]))
    if not hs:
        raise ValueError("grid.h is empty")
    for a, b in zip(hs, hs[1:]):
        if not math.isclose(a / b, 2.0, rel_tol=1e-9):
            raise ValueError("grid.h must halve from one entry to the next")
    mode = str(raw.get("reference.mode", "analytic" if kernel.family.value == "Exponential1D" else "oversolve"))
    if mode not in ("analytic", "oversolve", "none"):
        raise ValueError(f"unknown reference mode {mode!r}")
    if mode == "analytic" and kernel.family.value != "Exponential1D":
        raise ValueError("analytic references exist for the 1D exponential kernel only")
    refinement = int(raw.get("reference.refinement", 4))
    enlargement = float(raw.get("reference.enlargement", 2.0))
    if refinement < 1 or refinement & (refinement - 1):
        raise ValueError("reference.refinement must be a power of two")
    if enlargement < 1:
        raise ValueError("reference.enlargement must be at least 1")
    kind = str(raw.get("source.kind", "gaussian_1d" if dim == 1 else "gaussian_2d_exp"))
    amp = raw.get("source.amplitude")
    rate = raw.get("source.rate")
    if kind == "gaussian" and (amp is None or rate is None):
        raise ValueError("source.kind = gaussian needs source.amplitude and source.rate")
    solver = {}
    for key in ("method", "tol", "max_iters", "restart", "preconditioner", "lumped_reach"):
        if f"solver.{key}" in raw:
            solver[key] = raw[f"solver.{key}"]
    SolveOptions(**solver)
    cfg = ExperimentConfig(
        name=str(raw.get("name", "experiment")), k=k, kernel=kernel, z=z, d_pml=d_pml, shape=shape, l=l,
        h_values=hs, delta_b=None if raw.get("grid.delta_b") is None else float(raw["grid.delta_b"]),
        source_kind=kind, source_amplitude=None if amp is None else float(amp),
        source_rate=None if rate is None else float(rate), solver=solver, reference_mode=mode,
        refinement=refinement, enlargement=enlargement, reference_solver=raw.get("reference.solver_method"),
        order=int(raw.get("assembly.order", 8)), rtol=float(raw.get("assembly.rtol", 1e-10)),
        save_fields=bool(raw.get("output.fields", True)), jobs=int(raw.get("run.jobs", 1)), raw=dict(raw),
    )
    if cfg.source_kind not in ("zero", "gaussian", "gaussian_1d", "gaussian_2d_exp", "gaussian_2d_frac"):
        raise ValueError(f"unknown source kind {cfg.source_kind!r}")
    _check_source(cfg)
    return cfg


def _check_source(cfg):
    """The source must be negligible (relative 1e-10) on the interface of the domain."""
    f = cfg.source()
    if f.amplitude == 0:
        return
    if f.dim != cfg.dim:
        raise ValueError("source dimension does not match the domain")
    edge = np.array([cfg.l]) if cfg.dim == 1 else np.array([[cfg.l, 0.0]])
    if abs(f(edge)[0]) > 1e-10 * abs(f.amplitude):
        raise ValueError("source support is not contained in the physical domain")


def load_config(path):
    with open(path) as fh:
        return config_from_dict(parse_config_text(fh.read()))


# ---------------------------------------------------------------------------
# fields, norms and orders


@dataclass
class SolutionField:
    grid: object
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def trapezoid_weights(grid):
    """Composite trapezoid weights on Interior nodes (zero elsewhere).

    A node gets a factor 1/2 along each axis on which a neighbour leaves the region,
    which is the tensor trapezoid rule on intervals and squares.
    """
    inside = grid.classes == IndexClass.INTERIOR
    idx = grid.index if grid.dim == 2 else grid.index[:, None]
    key = {tuple(p) for p in idx[inside].tolist()}
    w = np.where(inside, grid.h ** grid.dim, 0.0)
    for j in range(grid.dim):
        step = np.zeros(grid.dim, dtype=np.int64)
        step[j] = 1
        for sgn in (1, -1):
            nb = idx + sgn * step
            out = np.array([tuple(p) not in key for p in nb.tolist()])
            w = np.where(inside & out, 0.5 * w, w)
    return w


def l2_error(u, ref, grid=None):
    """Trapezoidal ``L^2(Omega)`` norm of ``u - ref`` over Interior nodes."""
    if isinstance(u, SolutionField):
        grid = u.grid if grid is None else grid
        u = u.values
    if isinstance(ref, SolutionField):
        if ref.grid is not grid and ref.grid.index.shape != grid.index.shape:
            raise ValueError("fields live on different grids")
        ref = ref.values
    if grid is None:
        raise ValueError("a grid is needed")
    u = np.asarray(u)
    ref = np.asarray(ref)
    if u.shape != ref.shape or u.shape[0] != grid.n_nodes:
        raise ValueError(f"field shapes {u.shape} and {ref.shape} do not match the grid ({grid.n_nodes} nodes)")
    w = trapezoid_weights(grid)
    return float(np.sqrt(np.sum(w * np.abs(u - ref) ** 2)))


def convergence_orders(errors):
    """``log2(e_{i-1} / e_i)`` for ``[(h, e), ...]`` with h halving each step."""
    errors = list(errors)
    for (h0, _), (h1, _) in zip(errors, errors[1:]):
        if not math.isclose(h0 / h1, 2.0, rel_tol=1e-9):
            raise ValueError("mesh sizes must halve from one entry to the next")
    for h, e in errors:
        if not e > 0:
            raise ValueError(f"nonpositive error {e} at h={h}")
    return [math.log2(e0 / e1) for (_, e0), (_, e1) in zip(errors, errors[1:])]


# ---------------------------------------------------------------------------
# running


def _delta_b(cfg, h):
    if cfg.delta_b is not None:
        return cfg.delta_b
    horizon = cfg.kernel.horizon
    return horizon if math.isfinite(horizon) else h


def build_grid(cfg, h, l=None, d_pml=None):
    l = cfg.l if l is None else l
    d_pml = cfg.d_pml if d_pml is None else d_pml
    if cfg.dim == 1:
        return build_grid_1d(h, l, d_pml, _delta_b(cfg, h))
    return build_grid_2d(h, cfg.shape, l, d_pml, _delta_b(cfg, h))


def solve_on(cfg, h, l=None, d_pml=None, method=None):
    """Assemble and solve one configuration at mesh size ``h``."""
    t0 = time.perf_counter()
    grid = build_grid(cfg, h, l, d_pml)
    stretch = cfg.stretch(grid.l, grid.d_pml)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        system = assemble(cfg.kernel, stretch, grid, cfg.source(), cfg.k, order=cfg.order, rtol=cfg.rtol)
    t1 = time.perf_counter()
    report = solve(system, cfg.solve_options(method))
    t2 = time.perf_counter()
    meta = {
        "h": h,
        "config_hash": cfg.config_hash(),
        "n_unknowns": int(system.n_unknowns),
        "nnz": int(system.matrix.nnz),
        "assembly": {k: v for k, v in system.metadata.items() if k != "unconverged_offsets"},
        "unconverged_offsets": len(system.metadata["unconverged_offsets"]),
        "warnings": sorted({str(w.message) for w in caught}),
        "solver": _jsonable(report.summary()),
        "assembly_seconds": t1 - t0,
        "solve_seconds": t2 - t1,
        "wall_seconds": t2 - t0,
    }
    return SolutionField(grid=grid, values=report.field, meta=meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        if len(obj) > 50:
            obj = list(obj[:25]) + list(obj[-25:])
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def restrict(fine, coarse_grid):
    """Values of ``fine`` at the nodes of ``coarse_grid`` (coarse nodes must be fine nodes)."""
    ratio = coarse_grid.h / fine.grid.h
    r = round(ratio)
    if r < 1 or not math.isclose(ratio, r, rel_tol=1e-9):
        raise ValueError("reference mesh does not refine the coarse mesh by an integer factor")
    idx = coarse_grid.index if coarse_grid.dim == 2 else coarse_grid.index[:, None]
    fidx = fine.grid.index if fine.grid.dim == 2 else fine.grid.index[:, None]
    pos = {tuple(p): i for i, p in enumerate(fidx.tolist())}
    out = np.zeros(coarse_grid.n_nodes, dtype=complex)
    inside = coarse_grid.classes == IndexClass.INTERIOR
    for i in np.flatnonzero(inside):
        j = pos.get(tuple((idx[i] * r).tolist()))
        if j is None:
            raise ValueError("reference grid does not cover the physical domain")
        out[i] = fine.values[j]
    return out


def analytic_reference(cfg, grid):
    x = grid.nodes
    vals = np.zeros(grid.n_nodes, dtype=complex)
    inside = grid.classes == IndexClass.INTERIOR
    f = cfg.source()
    if f.amplitude != 0:
        vals[inside] = exact_solution_exponential(f, cfg.k, cfg.kernel.c_gamma, x[inside], support=(-cfg.l, cfg.l))
    return vals


@dataclass
class SweepRow:
    h: float
    error: float
    order: float | None = None
    status: str = "ok"
    message: str = ""


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    fields: dict
    reference: dict
    seconds: float

    @property
    def failed(self):
        return any(r.status != "ok" for r in self.rows)

    def errors(self):
        return [(r.h, r.error) for r in self.rows]

    def orders(self):
        return [r.order for r in self.rows[1:]]


_FAILURES = (QuadratureError, SolverError, ValueError, ArithmeticError, MemoryError, np.linalg.LinAlgError)


def _solve_job(args):
    cfg, h = args
    try:
        return solve_on(cfg, h), None
    except _FAILURES as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _reference_field(cfg):
    if cfg.reference_mode != "oversolve":
        return None, {"mode": cfg.reference_mode}
    h_ref = min(cfg.h_values) / cfg.refinement
    l_ref = cfg.l * cfg.enlargement
    d_ref = cfg.d_pml * cfg.enlargement
    info = {"mode": "oversolve", "h": h_ref, "refinement": cfg.refinement, "enlargement": cfg.enlargement,
            "l": l_ref, "d_pml": d_ref}
    ref = solve_on(cfg, h_ref, l_ref, d_ref, method=cfg.reference_solver)
    info["meta"] = ref.meta
    return ref, info


def run_experiment(cfg, jobs=None):
    """Solve every mesh of the sweep, compare against the reference and compute orders.

    Failed meshes are kept as rows with status ``failed`` and a NaN error; the sweep
    continues past them.
    """
    t0 = time.perf_counter()
    jobs = cfg.jobs if jobs is None else jobs
    args = [(cfg, h) for h in cfg.h_values]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_solve_job, args))
    else:
        outcomes = [_solve_job(a) for a in args]

    ref_error = None
    try:
        ref, ref_info = _reference_field(cfg)
    except _FAILURES as exc:
        ref, ref_info = None, {"mode": cfg.reference_mode, "error": f"{type(exc).__name__}: {exc}"}
        ref_error = f"reference failed: {ref_info['error']}"

    rows, fields = [], {}
    for (_, h), (sol, err) in zip(args, outcomes):
        if err is None and ref_error is not None:
            err = ref_error
        if err is not None:
            rows.append(SweepRow(h, float("nan"), status="failed", message=err))
            continue
        fields[h] = sol
        if cfg.reference_mode == "none":
            rows.append(SweepRow(h, float("nan"), status="ok", message="no reference"))
            continue
        try:
            target = analytic_reference(cfg, sol.grid) if ref is None else restrict(ref, sol.grid)
            rows.append(SweepRow(h, l2_error(sol.values, target, sol.grid)))
        except _FAILURES as exc:
            rows.append(SweepRow(h, float("nan"), status="failed", message=f"{type(exc).__name__}: {exc}"))
    for prev, row in zip(rows, rows[1:]):
        if prev.status == "ok" and row.status == "ok" and prev.error > 0 and row.error > 0:
            row.order = math.log2(prev.error / row.error)
    return ExperimentResult(cfg, rows, fields, ref_info, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def field_filename(i):
    return f"field_{i:02d}.npz"


def write_results(result, out_dir):
    """``errors.csv``, ``meta.json`` and (optionally) per-mesh fields under ``fields/``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "errors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "error", "order", "status"])
        for r in result.rows:
            w.writerow([_fmt(r.h), _fmt(r.error), _fmt(r.order), r.status])
    cfg = result.config
    saved = {}
    if cfg.save_fields:
        os.makedirs(os.path.join(out_dir, "fields"), exist_ok=True)
        for i, (h, sol) in enumerate(sorted(result.fields.items(), reverse=True)):
            name = field_filename(i)
            g = sol.grid
            np.savez(os.path.join(out_dir, "fields", name), h=h, dim=g.dim, index=g.index, classes=g.classes,
                     re=sol.values.real, im=sol.values.imag)
            saved[repr(h)] = name
    meta = {
        "name": cfg.name,
        "config": _jsonable(cfg.raw),
        "config_hash": cfg.config_hash(),
        "reference": _jsonable(result.reference),
        "rows": [_jsonable(asdict(r)) for r in result.rows],
        "runs": {repr(h): _jsonable(sol.meta) for h, sol in result.fields.items()},
        "fields": saved,
        "seconds": result.seconds,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, default=str)


def read_errors(in_dir):
    rows = []
    with open(os.path.join(in_dir, "errors.csv")) as fh:
        for rec in csv.DictReader(fh):
            rows.append(SweepRow(float(rec["h"]), float(rec["error"]),
                                 float(rec["order"]) if rec["order"] else None, rec.get("status", "ok")))
    return rows


def render_table(rows):
    lines = [f"{'h':>12}  {'error':>12}  {'order':>7}  status"]
    for r in rows:
        order = "" if r.order is None else f"{r.order:.2f}"
        lines.append(f"{r.h:>12.6g}  {r.error:>12.4e}  {order:>7}  {r.status}")
    return "\n".join(lines)


def load_field(in_dir, h):
    """``(x, values, classes)`` for the saved field whose mesh size matches ``h``."""
    with open(os.path.join(in_dir, "meta.json")) as fh:
        meta = json.load(fh)
    for key, name in meta.get("fields", {}).items():
        if math.isclose(float(key), h, rel_tol=1e-9):
            data = np.load(os.path.join(in_dir, "fields", name))
            x = data["index"] * float(data["h"])
            return x, data["re"] + 1j * data["im"], data["classes"]
    raise KeyError(f"no saved field for h={h}")
