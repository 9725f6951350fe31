"""FEM accuracy and frequency convergence under mesh refinement.

For each (base_resolution, levels, grading_ratio) the script solves the
harmonic (f = 0) and Bessel (f = 1) problems, reports relative L2 errors,
the estimated gamma and the worst relative error of N(r) against the
closed form, then fits the convergence rate in h.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from crackfreq.exact import BesselMode, CrackHarmonic, closed_form_HEN
from crackfreq.fem import ZERO, Potential, interpolate, l2_error, l2_norm, solve_problem
from crackfreq.frequency import compute_trace, estimate_gamma
from crackfreq.slitmesh import make_slit_disk


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bases", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--levels", type=int, default=10)
    ap.add_argument("--ratio", type=float, default=0.5)
    ap.add_argument("--out", default="runs/refinement_study.csv")
    args = ap.parse_args()

    one = Potential("constant", 1.0)
    radii = np.geomspace(0.05, 0.8, 16)
    ref_N = np.array([closed_form_HEN(BesselMode(1), r)[2] for r in radii])
    rows = []
    for base in args.bases:
        mesh = make_slit_disk(1.0, args.levels, args.ratio, base)
        h = mesh.diameters().max()
        errs = {}
        for name, sol, f in (("harmonic", CrackHarmonic(1), ZERO), ("bessel", BesselMode(1), one)):
            u = solve_problem(mesh, f, sol.value)
            errs[name] = l2_error(u, sol.value) / l2_norm(interpolate(mesh, sol.value))
            if name == "bessel":
                tr = compute_trace(u, None, f, radii)
                gamma, _ = estimate_gamma(tr)
                n_err = float(np.max(np.abs(tr.N_vals / ref_N - 1)))
        rows.append(dict(base=base, vertices=mesh.n_vertices, h=h, l2_harmonic=errs["harmonic"],
                         l2_bessel=errs["bessel"], gamma=gamma, N_rel_err=n_err))
        print(f"base {base:4d}  V {mesh.n_vertices:6d}  h {h:.4f}  L2 harm {errs['harmonic']:.4e}  "
              f"L2 bessel {errs['bessel']:.4e}  gamma {gamma:.4f}  max|N/N_ref-1| {n_err:.4f}")
    hs = np.log([r["h"] for r in rows])
    for key in ("l2_harmonic", "l2_bessel"):
        rate = np.polyfit(hs, np.log([r[key] for r in rows]), 1)[0]
        print(f"rate {key}: {rate:.3f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
