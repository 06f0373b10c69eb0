"""Solve the desk instance and print the value, the saddle pairs and the reflection."""

import argparse

import numpy as np

from dynkinlab.game import extract_saddles, value_bruteforce, verify_saddle
from dynkinlab.instances import d1, d2
from dynkinlab.lattice import StoppingRule
from dynkinlab.rbsde import solve_rbsde


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--active", action="store_true", help="use the companion with active barriers")
    args = parser.parse_args()

    spec = d2() if args.active else d1()
    lat = spec.lattice
    sol = solve_rbsde(spec)
    root = StoppingRule.root(lat)
    bf = value_bruteforce(spec, root)
    print(f"Y_0 = {sol.root:.12f}   brute force lower/upper = {bf.lower[0]:.12f} / {bf.upper[0]:.12f}")
    np.set_printoptions(precision=6, suppress=True)
    for name, arr in (("L", spec.barriers.L), ("Y", sol.y.values), ("U", spec.barriers.U),
                      ("dR+", sol.r_plus.values), ("dR-", sol.r_minus.values)):
        print(f"{name:>4}: {arr}")
    s = extract_saddles(spec, root)
    for label, pair in (("star", s.star_pair), ("hat", s.hat_pair)):
        chk = verify_saddle(spec, root, pair, tol=1e-9)
        tau, sigma = pair
        print(f"{label:>4}: tau depths {tau.stop_depths()}, sigma depths {sigma.stop_depths()}, "
              f"saddle {chk.passed} (violation {chk.violation:.1e})")


if __name__ == "__main__":
    main()
