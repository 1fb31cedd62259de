"""Command-line front end.

Subcommands mirror the library surface: `corrector`, `homogenize`,
`reference`, `lattice`, `hmm`, and `study`.  The library API (see README and
demos/) is the primary interface; the CLI wraps it for quick runs and CSV
emission.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import study
from .averaging import build_filter, hom_tensor_prime, hom_tensor_projected
from .coeffs import catalog
from .corrector import corrector_error, solve_regularized
from .grid import StructuredGrid
from .hmm import fine_reference, h1_distance, hmm_solve, numerical_corrector, scaled_field
from .lattice import LatticeField, default_pattern, exact_cell_hom, lattice_hom
from .reference import laminate_oracle, periodic_cell
from .study import fit_slope, write_csv, write_gnuplot


def _parse_T(value, R, default_div):
    if value in (None, "auto"):
        return R / default_div
    if value in ("inf", "infty"):
        return math.inf
    return float(value)


def _parse_xi(s):
    parts = [float(t) for t in s.split(",")]
    v = np.array(parts)
    return v / np.linalg.norm(v)


def cmd_corrector(args):
    field = catalog(args.field)
    grid = StructuredGrid.square(args.R, args.n)
    T = _parse_T(args.T, args.R, 100.0)
    from .corrector import corrector_ladder, extrapolate_prefix

    if math.isinf(T):
        sol = solve_regularized(grid, field, T, _parse_xi(args.xi), dual=args.dual)
    else:
        ladder = corrector_ladder(grid, field, T, args.k, _parse_xi(args.xi), dual=args.dual)
        sol = extrapolate_prefix(ladder, args.k)
    g = sol.gradient_at_quad()
    print(f"corrector: field={args.field} R={args.R} n={args.n} T={T:g} k={args.k}")
    print(f"  mean |grad phi|^2 on the box: {np.mean(np.sum(g * g, axis=1)):.6e}")
    if field.period is not None and args.window:
        cell = periodic_cell(field, max(args.n // int(2 * args.R), 32))
        err = corrector_error(sol, cell.correctors[0 if abs(sol.xi[0]) > 0.5 else 1], window=args.window)
        print(f"  window f={args.window}: fint |grad(phi - phi_cell)|^2 = {err:.6e}")
    if args.csv:
        np.savetxt(args.csv, np.column_stack([grid.quad_points(), g]), delimiter=",",
                   header="x1,x2,dphi_dx1,dphi_dx2", comments="")
        print(f"  gradients written to {args.csv}")


def cmd_homogenize(args):
    field = catalog(args.field)
    T = _parse_T(args.T, args.R, 100.0)
    L = args.L if args.L is not None else args.R / 3.0
    filt = build_filter(args.p)
    make = hom_tensor_projected if args.variant == "projected" else hom_tensor_prime
    H = make(field, args.R, args.n, T, args.k, L, filt)
    m = H.matrix
    print(f"A_{{T={T:g},k={args.k},R={args.R:g},L={L:g},p={args.p}}} ({args.variant}):")
    print(f"  [[{m[0,0]: .8f}, {m[0,1]: .8f}],")
    print(f"   [{m[1,0]: .8f}, {m[1,1]: .8f}]]")
    print(f"  min sym eig: {H.min_sym_eig:.6f}   filter quad mass: {H.filter_mass:.10f}")
    if args.csv:
        rec = study.StudyRecord(
            field=args.field, variant=args.variant, T=T, k=args.k, R=args.R, L=L,
            p=H.params["p"], n=args.n, h=2 * args.R / args.n,
            error=float("nan"), error_def="tensor-only", wall_time=0.0,
        )
        _append_csv(args.csv, [rec])


def cmd_reference(args):
    field = catalog(args.field)
    if args.field.startswith("laminate") and field.profile is not None:
        oracle = laminate_oracle(field.profile)
        print(f"laminate oracle: diag({oracle[0,0]:.12f}, {oracle[1,1]:.12f})")
    res = periodic_cell(field, args.n)
    A = res.A_hom
    print(f"cell problem (n={args.n}): A_hom =")
    print(f"  [[{A[0,0]: .8f}, {A[0,1]: .8f}],")
    print(f"   [{A[1,0]: .8f}, {A[1,1]: .8f}]]")
    for d, c in enumerate(res.correctors):
        vals = c.u.values
        print(f"  corrector e{d+1}: cell mean {vals.mean():+.2e}, sup |phi| = {np.abs(vals).max():.4f}")


def cmd_lattice(args):
    field = LatticeField.from_file(args.pattern_file) if args.pattern_file else default_pattern()
    Acell = exact_cell_hom(field)
    print(f"pattern {field.name}: exact cell value A_hom = {Acell[0,0]:.12f} (offdiag {Acell[0,1]:.1e})")
    T = _parse_T(args.T, args.R, 10.0)
    filt = build_filter(args.p)
    A = lattice_hom(field, args.R, T, args.k, args.R / 3.0, filt)
    print(f"A'_{{T={T:g},k={args.k},R={args.R},L={args.R/3:.3f},p={args.p}}} = {A[0,0]:.9f}"
          f" (err {abs(A[0,0]-Acell[0,0]):.3e})")


def cmd_hmm(args):
    field = catalog(args.field)
    f_src = (lambda p: np.ones(p.shape[0])) if args.f == "const" else (
        lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
    )
    T = None if args.T == "auto" else float(args.T)
    h = None if args.h == "auto" else float(args.h)
    res = hmm_solve(field, args.eps, args.H, f_src, delta=args.delta, T=T, k=args.k, h=h)
    print(f"HMM: eps={args.eps} H={args.H} T={res.params['T']:g} k={args.k} "
          f"delta={args.delta} h={res.params['h']:g}")
    prov = res.tensor_map.provenance
    print(f"  elements: {res.mesh.n_elements} (computed {prov.count('computed')}, "
          f"copied {prov.count('copied-from-interior')})")
    A0 = res.tensor_map.tensors[0]
    print(f"  first element tensor: [[{A0[0,0]:.5f}, {A0[0,1]:.5f}], [{A0[1,0]:.5f}, {A0[1,1]:.5f}]]")
    if args.reference:
        field_eps = scaled_field(field, args.eps)
        u_eps = fine_reference(field_eps, (1.0, 1.0), res.params["h"] / 2.0, f_src)
        from .hmm import reconstructed_gradient
        from .grid import gradient_field

        corr = numerical_corrector(res.mesh, res.u, field_eps, args.eps,
                                   res.params["T"], args.kprime or args.k, args.delta, res.params["h"])
        pts = u_eps.grid.quad_points()
        C = reconstructed_gradient(res.mesh, corr, pts)
        g_eps = gradient_field(u_eps)
        w = u_eps.grid.quad_weight()
        rec_err = math.sqrt(w * np.sum((g_eps - C) ** 2))
        print(f"  ||grad u_eps - C||_L2(D) = {rec_err:.6e}")
    if args.csv:
        rows = []
        for e in range(res.mesh.n_elements):
            Ae = res.tensor_map.tensors[e]
            rows.append([e, *res.mesh.centroids()[e], Ae[0, 0], Ae[0, 1], Ae[1, 0], Ae[1, 1],
                         res.tensor_map.provenance[e]])
        import csv as _csv

        with open(args.csv, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["element", "cx", "cy", "a11", "a12", "a21", "a22", "provenance"])
            w.writerows(rows)
        print(f"  per-element tensors written to {args.csv}")


def cmd_study(args):
    R_list = [float(r) for r in args.rlist.split(",")] if args.rlist else None
    if args.preset == "lattice":
        Rs = [int(r) for r in (R_list or [20, 40, 60, 80, 100])]
        variants = [("naive", math.inf, 1), ("k1", None, 1), ("k2", None, 2)][: args.kmax + 1]
        recs = study.sweep_lattice(Rs, variants=variants)
    elif args.preset == "mat2":
        Rs = R_list or [5, 10, 20]
        recs = study.sweep_corrector("mat2", Rs)
        recs += study.sweep_periodic_tensor("mat2", Rs)
    elif args.preset in ("mat3", "mat5"):
        Rs = R_list or [5, 10, 20, 30]
        recs = study.sweep_ap(args.preset, Rs, ks=list(range(1, args.kmax + 1)))
    elif args.preset == "mat4":
        Rs = R_list or [5, 10, 20]
        recs = study.sweep_periodic_tensor("mat4", Rs)
    elif args.preset == "hmm":
        recs = _hmm_preset_records()
    else:
        raise SystemExit(f"unknown preset {args.preset}")
    for key in sorted({(r.field, r.variant) for r in recs}):
        pts = [r for r in recs if (r.field, r.variant) == key and r.error > 0]
        if len(pts) >= 3:
            fit = fit_slope(pts)
            print(f"{key[0]:10s} {key[1]:14s} slope {fit.slope:+.3f} over {fit.npoints} points")
    if args.out:
        write_csv(recs, args.out)
        print(f"{len(recs)} records written to {args.out}")
    if args.gnuplot_data:
        write_gnuplot(recs, args.gnuplot_data)
        print(f"gnuplot data written to {args.gnuplot_data}")


def _hmm_preset_records():
    import time

    from .coeffs import catalog as _cat

    field = _cat("mat2")
    recs = []
    eps = 1.0 / 16.0
    f_src = lambda p: np.ones(p.shape[0])
    cell = periodic_cell(field, 128)
    for H in (0.5, 0.25):
        t0 = time.perf_counter()
        res = hmm_solve(field, eps, H, f_src, k=1)
        u_hom = _uhom_reference(cell.A_hom, f_src, 1.0 / 256)
        _, _, dh1 = h1_distance(u_hom, res.u)
        recs.append(
            study.StudyRecord(
                field="mat2-hmm", variant="k1", T=res.params["T"], k=1, R=float(1.0 / H),
                L=H / 2, p=res.params["p"], n=res.mesh.n_elements, h=res.params["h"],
                error=dh1, error_def="|u_HMM-u_hom|_H1", wall_time=time.perf_counter() - t0,
            )
        )
    return recs


def _uhom_reference(A_hom, f_src, h_ref):
    from .coeffs import constant

    return fine_reference(constant(A_hom), (1.0, 1.0), h_ref, f_src)


def _append_csv(path, records):
    import os

    exists = os.path.exists(path)
    with open(path, "a", newline="") as fh:
        import csv as _csv

        w = _csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(study.CSV_COLUMNS)
        for r in records:
            w.writerow(study._fmt_row(r.row()))


def main(argv=None):
    ap = argparse.ArgumentParser(prog="exhom", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("corrector", help="solve a regularized/extrapolated box corrector")
    c.add_argument("--field", required=True)
    c.add_argument("--R", type=float, required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--T", default="auto", help="'auto' (= R/100), 'inf', or a number")
    c.add_argument("--k", type=int, default=1)
    c.add_argument("--xi", default="1,0")
    c.add_argument("--dual", action="store_true")
    c.add_argument("--window", type=float, default=None, help="inner window fraction for the error")
    c.add_argument("--csv", default=None)
    c.set_defaults(func=cmd_corrector)

    hcmd = sub.add_parser("homogenize", help="windowed homogenized tensor")
    hcmd.add_argument("--field", required=True)
    hcmd.add_argument("--R", type=float, required=True)
    hcmd.add_argument("--n", type=int, required=True)
    hcmd.add_argument("--T", default="auto")
    hcmd.add_argument("--k", type=int, default=1)
    hcmd.add_argument("--L", type=float, default=None)
    hcmd.add_argument("--p", default="3")
    hcmd.add_argument("--variant", choices=("prime", "projected"), default="projected")
    hcmd.add_argument("--csv", default=None)
    hcmd.set_defaults(func=cmd_homogenize)

    r = sub.add_parser("reference", help="periodic cell problem / laminate oracle")
    r.add_argument("--field", required=True)
    r.add_argument("--n", type=int, default=128)
    r.set_defaults(func=cmd_reference)

    lat = sub.add_parser("lattice", help="exact discrete warm-up pipeline")
    lat.add_argument("--R", type=int, default=40, help="box side in lattice units")
    lat.add_argument("--T", default="auto", help="'auto' (= R/10), 'inf', or a number")
    lat.add_argument("--k", type=int, default=1)
    lat.add_argument("--p", default="inf")
    lat.add_argument("--pattern-file", default=None)
    lat.set_defaults(func=cmd_lattice)

    hm = sub.add_parser("hmm", help="coarse multiscale pipeline")
    hm.add_argument("--field", default="mat2")
    hm.add_argument("--eps", type=float, default=1 / 16)
    hm.add_argument("--H", type=float, default=0.25)
    hm.add_argument("--delta", type=float, default=1.5)
    hm.add_argument("--T", default="auto")
    hm.add_argument("--k", type=int, default=1)
    hm.add_argument("--kprime", type=int, default=None)
    hm.add_argument("--h", default="auto")
    hm.add_argument("--f", choices=("const", "sin"), default="const")
    hm.add_argument("--reference", action="store_true", help="also run the fine solve")
    hm.add_argument("--csv", default=None)
    hm.set_defaults(func=cmd_hmm)

    st = sub.add_parser("study", help="convergence sweeps with slope fits")
    st.add_argument("--preset", required=True,
                    choices=("lattice", "mat2", "mat3", "mat4", "mat5", "hmm"))
    st.add_argument("--kmax", type=int, default=2)
    st.add_argument("--rlist", default=None, help="comma-separated R values")
    st.add_argument("--out", default=None)
    st.add_argument("--gnuplot-data", dest="gnuplot_data", default=None)
    st.set_defaults(func=cmd_study)

    args = ap.parse_args(argv)
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
