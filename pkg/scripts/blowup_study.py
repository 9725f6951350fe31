"""Tip coefficients and blow-up errors for the Bessel mode, exact and FEM.

The FEM error of the rescaled field levels off at a floor set by the tip
elements; the study shows the floor against grading levels and ratio.
"""
import argparse
import math

from crackfreq.blowup import alpha_coefficients, blowup_errors
from crackfreq.exact import BesselMode
from crackfreq.fem import Potential, solve_problem
from crackfreq.slitmesh import make_slit_disk
from crackfreq.spectrum import basis_circle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--meshes", nargs="+", default=["64,4,0.5", "64,8,0.5", "64,12,0.5", "64,16,0.7"],
                    help="base,levels,ratio triples")
    args = ap.parse_args()
    one = Potential("constant", 1.0)
    basis = basis_circle(8)
    lams = [0.5**j for j in range(1, 7)]
    r_list = (0.1, 0.2, 0.4)
    phi_norm = math.sqrt(2 / 3)

    alpha, spread, _ = alpha_coefficients(BesselMode(1), None, one, basis, 1, r_list)
    errs = [blowup_errors(BesselMode(1), 1, alpha, basis, lam)[0] for lam in lams]
    print(f"exact: alpha {alpha[0]:.8f} (sqrt2 {math.sqrt(2):.8f}), spread {spread[0]:.1e}")
    print("  errors " + " ".join(f"{e:.3e}" for e in errs))
    for triple in args.meshes:
        base, levels, ratio = triple.split(",")
        mesh = make_slit_disk(1.0, int(levels), float(ratio), int(base))
        u = solve_problem(mesh, one, BesselMode(1).value)
        alpha, spread, _ = alpha_coefficients(u, None, one, basis, 1, r_list)
        errs = [blowup_errors(u, 1, alpha, basis, lam)[0] / phi_norm for lam in lams]
        print(f"FEM {triple}: alpha {alpha[0]:.4f} ({alpha[0] / math.sqrt(2) - 1:+.2%}), "
              f"spread {spread[0] / alpha[0]:.2%}, floor {errs[-1]:.3f} of |Phi|")
        print("  relative errors " + " ".join(f"{e:.3f}" for e in errs))


if __name__ == "__main__":
    main()
