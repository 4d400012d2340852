"""Command-line driver: ``duffy-lor --cmd <command> [options]``.

Every command writes a table (CSV with a trailing ``# config_hash=...``
line, or JSON) to ``--out`` or standard output.  Exit codes: 0 success,
2 configuration error, 3 numerical failure; failures print a JSON error
object on standard error.
"""

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__

COMMANDS = ("bounds1d", "ref-cond", "mass-cond", "assemble", "solve", "fictitious", "jacobi-check")
LATTICES = {"0,0": (0, 0), "1,1": (1, 1), "0,1": (0, 1), "1,0": (1, 0)}
FORCINGS = ("one", "sinpi")


class ConfigError(Exception):
    exit_code = 2


class NumericalError(Exception):
    exit_code = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="duffy-lor", description="High-order Duffy-space FEM and LOR preconditioning studies.")
    p.add_argument("--cmd", required=True, help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--order", type=int, help="polynomial degree N")
    p.add_argument("--order-range", help="degrees as 'a:b' (inclusive, doubling from a), 'a..b' (every N) or 'a,b,c'")
    p.add_argument("--mesh", help="duffy-mesh v1 file")
    p.add_argument("--gen", default="4,4", help="structured mesh 'nx,ny' (default 4,4)")
    p.add_argument("--refine", type=int, default=0, help="uniform refinements of the mesh")
    p.add_argument("--lattice-x", default="0,0", help="Lobatto weights of the x lattice")
    p.add_argument("--lattice-y", default="0,0", help="Lobatto weights of the y lattice")
    p.add_argument("--form", default=None, help="stiffness | mass | mass+stiffness")
    p.add_argument("--space", default=None, help="V, W, Z or a comma list")
    p.add_argument("--rtol", type=float, default=1e-10)
    p.add_argument("--maxit", type=int, default=1000)
    p.add_argument("--forcing", default="one", help="one | sinpi")
    p.add_argument("--mass-diag", default="tensor", help="tensor | diagonal")
    p.add_argument("--out", help="output file (or directory prefix for assemble)")
    p.add_argument("--format", default="csv", help="csv | json")
    p.add_argument("--version", action="version", version=__version__)
    return p


# ------------------------------------------------------------- config helpers

def parse_orders(args, default):
    if args.order is not None and args.order_range is not None:
        raise ConfigError("give --order or --order-range, not both")
    if args.order is not None:
        orders = [args.order]
    elif args.order_range:
        spec = args.order_range.strip()
        try:
            if ".." in spec:
                a, b = map(int, spec.split(".."))
                orders = list(range(a, b + 1))
            elif ":" in spec:
                a, b = map(int, spec.split(":"))
                orders, n = [], a
                while n <= b:
                    orders.append(n)
                    n *= 2
            else:
                orders = [int(s) for s in spec.split(",")]
        except ValueError:
            raise ConfigError(f"malformed --order-range {spec!r}") from None
    else:
        orders = list(default)
    if not orders or min(orders) < 1:
        raise ConfigError("polynomial degrees must be at least 1")
    return orders


def parse_lattice(tag):
    key = tag.strip().strip("()").replace(" ", "")
    if key not in LATTICES:
        raise ConfigError(f"unknown lattice {tag!r}; expected one of {sorted(LATTICES)}")
    return LATTICES[key]


def parse_spaces(args, default=("V", "W", "Z")):
    if args.space is None:
        return list(default)
    spaces = [s.strip().upper() for s in args.space.split(",")]
    if any(s not in ("V", "W", "Z") for s in spaces):
        raise ConfigError(f"unknown space in {args.space!r}")
    return spaces


def load_mesh(args):
    from .mesh import MeshError, parse_mesh, structured_tri_mesh, uniform_refine

    if args.mesh:
        try:
            text = Path(args.mesh).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read mesh file: {exc}") from None
        try:
            mesh = parse_mesh(text)
        except MeshError as exc:
            raise ConfigError(f"bad mesh file: {exc}") from None
    else:
        try:
            nx, ny = (int(s) for s in args.gen.split(","))
            mesh = structured_tri_mesh(nx, ny)
        except ValueError:
            raise ConfigError(f"malformed --gen {args.gen!r}") from None
    if args.refine < 0:
        raise ConfigError("--refine must be non-negative")
    for _ in range(args.refine):
        mesh = uniform_refine(mesh)
    return mesh


def config_dict(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != "out"}


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(v.item())
    return str(v)


def render(rows, columns, cfg, fmt):
    h = config_hash(cfg)
    if fmt == "json":
        clean = [{c: (float(r[c]) if isinstance(r[c], (float, np.floating)) else
                      r[c].item() if isinstance(r[c], np.generic) else r[c]) for c in columns} for r in rows]
        return json.dumps({"config": cfg, "config_hash": h, "columns": columns, "rows": clean},
                          indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    buf.write(f"# config_hash={h} version={__version__}\n")
    return buf.getvalue()


# ------------------------------------------------------------- commands

def cmd_bounds1d(args):
    from .interp1d import EQUIVALENCE_KINDS, equivalence_constants

    rows = []
    for N in parse_orders(args, range(2, 17)):
        for kind in EQUIVALENCE_KINDS:
            lo, hi = equivalence_constants(kind, N)
            rows.append({"kind": kind, "N": N, "c_low": lo, "c_high": hi, "ratio": hi / lo})
    return rows, ["kind", "N", "c_low", "c_high", "ratio"]


def reference_condition(kind, N, method="auto"):
    """Spectrum of the LOR-preconditioned reference-triangle matrix for V, W or Z."""
    from .assembly import assemble_global, assemble_lor, ref_space
    from .mesh import build_dof_map, build_lor_mesh, reference_mesh
    from .solver import cond_estimate

    mesh = reference_mesh()
    form = "mass" if kind == "Z" else "stiffness"
    deflation = {"V": "constants", "W": "threshold", "Z": "none"}[kind]
    A = assemble_global(mesh, build_dof_map(mesh, kind, N), ref_space(kind, N), form)
    A0 = assemble_lor(build_lor_mesh(mesh, N), kind, form)
    if deflation == "threshold" and method == "auto":
        method = "dense"
    return cond_estimate(A, A0, deflation=deflation, method=method)


def cmd_ref_cond(args):
    rows = []
    for N in parse_orders(args, (1, 2, 4, 8)):
        for kind in parse_spaces(args):
            est = reference_condition(kind, N)
            rows.append({"space": kind, "N": N, "lambda_min": est.lambda_min,
                         "lambda_max": est.lambda_max, "kappa": est.cond, "method": est.method})
    return rows, ["space", "N", "lambda_min", "lambda_max", "kappa", "method"]


def mass_condition(N, wx, wy, variant="tensor"):
    from .precond import reference_mass_diag, reference_mass_matrix
    from .solver import cond_estimate

    M = reference_mass_matrix(N, wx, wy)
    D = sp.diags(reference_mass_diag(N, wx, wy, variant)).tocsr()
    return cond_estimate(M, D, method="auto")


def cmd_mass_cond(args):
    if args.mass_diag not in ("tensor", "diagonal"):
        raise ConfigError("--mass-diag must be tensor or diagonal")
    wx, wy = parse_lattice(args.lattice_x), parse_lattice(args.lattice_y)
    rows = []
    for N in parse_orders(args, (2, 4, 8, 16, 32)):
        est = mass_condition(N, wx, wy, args.mass_diag)
        rows.append({"lattice_x": args.lattice_x, "lattice_y": args.lattice_y, "N": N,
                     "variant": args.mass_diag, "kappa": est.cond, "method": est.method})
    return rows, ["lattice_x", "lattice_y", "N", "variant", "kappa", "method"]


def _lattices(args, N):
    from .duffy_ref import unit_lattice

    wx, wy = parse_lattice(args.lattice_x), parse_lattice(args.lattice_y)
    return unit_lattice(N, wx), unit_lattice(N, wy)


def cmd_assemble(args):
    from .assembly import assemble_global, assemble_lor, export_matrix_market
    from .duffy_ref import build_ref_space
    from .mesh import build_dof_map, build_lor_mesh

    mesh = load_mesh(args)
    orders = parse_orders(args, (4,))
    rows = []
    for N in orders:
        lx, ly = _lattices(args, N)
        for kind in parse_spaces(args, ("V",)):
            form = args.form or ("mass" if kind == "Z" else "stiffness")
            try:
                dm = build_dof_map(mesh, kind, N, lx, ly)
                A = assemble_global(mesh, dm, build_ref_space(kind, N, lx, ly), form)
                A0 = assemble_lor(build_lor_mesh(mesh, N, lx), kind, form) if lx is ly or \
                    np.allclose(lx.points, ly.points) else None
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            for label, M in (("high", A), ("lor", A0)):
                if M is None:
                    continue
                path = ""
                if args.out:
                    path = f"{args.out}_{kind}_{form.replace('+', '_')}_N{N}_{label}.mtx"
                    export_matrix_market(path, M)
                rows.append({"space": kind, "form": form, "N": N, "matrix": label, "rows": M.shape[0],
                             "nnz": M.nnz, "nnz_per_row": M.nnz / M.shape[0], "path": path})
    return rows, ["space", "form", "N", "matrix", "rows", "nnz", "nnz_per_row", "path"]


def _pattern_nnz(cell_dofs, n):
    P = sp.csr_matrix((np.ones(cell_dofs.size), (np.repeat(np.arange(len(cell_dofs)), cell_dofs.shape[1]),
                                                 cell_dofs.ravel())), shape=(len(cell_dofs), n))
    return (P.T @ P).nnz


def _forcing(name):
    if name == "one":
        return lambda x, y: np.ones_like(x)
    if name == "sinpi":
        return lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    raise ConfigError(f"unknown forcing {name!r}; expected one of {FORCINGS}")


def load_vector(mesh, dofmap, space, f):
    """Right-hand side ``int f v`` with the element Gauss rule."""
    from .duffy_ref import eval_tables

    tab = eval_tables(space)
    p0, J = mesh.element_maps()
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    X = tab.x * (1.0 - tab.y)
    px = p0[:, 0, None] + J[:, 0, 0, None] * X + J[:, 0, 1, None] * tab.y
    py = p0[:, 1, None] + J[:, 1, 0, None] * X + J[:, 1, 1, None] * tab.y
    fq = f(px, py) * tab.weight[None] * det[:, None]
    local = fq @ tab.value.T
    return np.bincount(dofmap.cell_dofs.ravel(), weights=local.ravel(), minlength=dofmap.total_dofs)


def solve_problem(mesh, N, rtol=1e-10, maxit=1000, forcing="one", lat=None):
    """``u - Laplace u = f`` with zero Dirichlet data, LOR-preconditioned CG."""
    from .assembly import MatfreeOperator, apply_dirichlet, assemble_lor, ref_space
    from .duffy_ref import build_ref_space
    from .mesh import build_dof_map, build_lor_mesh
    from .precond import lor_preconditioner
    from .solver import pcg

    space = ref_space("V", N) if lat is None else build_ref_space("V", N, lat, lat)
    dm = build_dof_map(mesh, "V", N, space.lattice_x, space.lattice_y)
    A = MatfreeOperator(mesh, dm, space, "mass+stiffness", dirichlet=True)
    lor = build_lor_mesh(mesh, N, space.lattice_x)
    A0 = assemble_lor(lor, "V", "mass+stiffness")
    M = lor_preconditioner(apply_dirichlet(A0, dm.boundary_dofs))
    b = load_vector(mesh, dm, space, _forcing(forcing))
    b[dm.boundary_dofs] = 0.0
    res = pcg(A, b, M, rtol=rtol, maxit=maxit)
    n = dm.total_dofs
    return {"N": N, "triangles": mesh.nt, "iterations": res.iterations, "converged": res.converged,
            "dofs": n, "nnz_high_per_row": _pattern_nnz(dm.cell_dofs, n) / n,
            "nnz_lor_per_row": A0.nnz / n}, res


def cmd_solve(args):
    _forcing(args.forcing)
    mesh = load_mesh(args)
    rows = []
    for N in parse_orders(args, (8,)):
        lx, ly = _lattices(args, N)
        if not np.allclose(lx.points, ly.points):
            raise ConfigError("solve needs the same lattice in x and y")
        try:
            row, res = solve_problem(mesh, N, args.rtol, args.maxit, args.forcing, lx)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not res.converged:
            raise NumericalError(f"CG did not converge for N={N} within {args.maxit} iterations")
        rows.append(row)
    return rows, ["N", "triangles", "iterations", "dofs", "nnz_high_per_row", "nnz_lor_per_row"]


def fictitious_run(mesh, N, rtol=1e-10, maxit=1000):
    from .precond import dirichlet_system, fictitious_preconditioner, fictitious_transfer
    from .solver import pcg

    ft = fictitious_transfer(mesh, N)
    A, _, _ = dirichlet_system(ft)
    B = fictitious_preconditioner(ft)
    b = np.ones(A.shape[0])
    b[ft.p_boundary] = 0.0
    res = pcg(A, b, B, rtol=rtol, maxit=maxit)
    return {"N": N, "triangles": mesh.nt, "iterations": res.iterations, "converged": res.converged,
            "dofs_pn": A.shape[0], "dofs_v": ft.R.shape[1], "block_size": ft.block_size}, res


def cmd_fictitious(args):
    mesh = load_mesh(args)
    rows = []
    for N in parse_orders(args, (2, 4, 8)):
        row, res = fictitious_run(mesh, N, args.rtol, args.maxit)
        if not res.converged:
            raise NumericalError(f"CG did not converge for N={N} within {args.maxit} iterations")
        rows.append(row)
    return rows, ["N", "triangles", "iterations", "dofs_pn", "dofs_v", "block_size"]


def jacobi_checks(orders=range(3, 21)):
    """Identity suite: quadrature exactness, Sundermann bracket, Phi identities."""
    from .interp1d import phi_discrete_identities
    from .jacobi1d import jacobi_moments, quad_rule

    rows = []
    for N in orders:
        for w in ((0, 0), (0, 1), (1, 1)):
            r = quad_rule("lobatto", N + 1, w)
            mom = jacobi_moments(2 * N - 1, w)
            got = np.array([r.integrate(r.nodes ** k) for k in range(2 * N)])
            err = float(np.max(np.abs(got - mom) / np.maximum(1.0, np.abs(mom))))
            rows.append({"check": f"lobatto_exactness_{w[0]}{w[1]}", "N": N, "value": err,
                         "expected": 0.0, "abs_err": err, "pass": err <= 1e-12})
        theta = np.arccos(quad_rule("lobatto", N + 1, (0, 0)).nodes[::-1])
        i = np.arange(N + 1)
        lo, hi = 2 * i * np.pi / (2 * N + 1), (2 * i + 1) * np.pi / (2 * N + 1)
        ok = bool(np.all((theta >= lo - 1e-12) & (theta <= hi + 1e-12)))
        rows.append({"check": "sundermann_bracket", "N": N, "value": float(ok), "expected": 1.0,
                     "abs_err": 0.0 if ok else 1.0, "pass": ok})
        for name, (got, want) in phi_discrete_identities(N).items():
            err = abs(got - want)
            rows.append({"check": f"phi_{name}", "N": N, "value": got, "expected": want,
                         "abs_err": err, "pass": err <= 1e-10})
    return rows


def cmd_jacobi_check(args):
    orders = parse_orders(args, range(3, 21))
    if min(orders) < 3:
        raise ConfigError("jacobi-check needs N >= 3")
    return jacobi_checks(orders), ["check", "N", "value", "expected", "abs_err", "pass"]


HANDLERS = {"bounds1d": cmd_bounds1d, "ref-cond": cmd_ref_cond, "mass-cond": cmd_mass_cond,
            "assemble": cmd_assemble, "solve": cmd_solve, "fictitious": cmd_fictitious,
            "jacobi-check": cmd_jacobi_check}


def run(argv=None, stdout=None, stderr=None):
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = build_parser().parse_args(argv)
        if args.cmd not in HANDLERS:
            raise ConfigError(f"unknown command {args.cmd!r}; expected one of {list(COMMANDS)}")
        if args.format not in ("csv", "json"):
            raise ConfigError("--format must be csv or json")
        if args.rtol <= 0 or args.maxit < 1:
            raise ConfigError("--rtol must be positive and --maxit at least 1")
        rows, columns = HANDLERS[args.cmd](args)
        text = render(rows, columns, config_dict(args), args.format)
        if args.out and args.cmd != "assemble":
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            stdout.write(text)
        return 0
    except (ConfigError, NumericalError) as exc:
        kind = "config" if isinstance(exc, ConfigError) else "numerical"
        stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
        return exc.exit_code
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        stderr.write(json.dumps({"error": "numerical", "message": str(exc)}) + "\n")
        return 3


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
