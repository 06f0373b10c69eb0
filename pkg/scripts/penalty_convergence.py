"""Penalization error table on the desk instance or its active-barrier companion."""

import argparse

from dynkinlab.instances import d1, d2
from dynkinlab.rbsde import penalty_study


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-power", type=int, default=6, help="largest n is 4**max_power")
    parser.add_argument("--active", action="store_true", help="use the companion with active barriers")
    args = parser.parse_args()

    ns = [4 ** k for k in range(args.max_power + 1)]
    rows = penalty_study(d2() if args.active else d1(), ns, timing=True)
    print(f"{'n':>8} {'sup error':>12} {'lower mono':>10} {'upper mono':>10} {'sandwich':>8} {'ms':>8}")
    for r in rows:
        print(f"{r.n:8.0f} {r.sup_error:12.3e} {r.lower_monotone!s:>10} {r.upper_monotone!s:>10} "
              f"{r.sandwich!s:>8} {r.runtime_ms:8.3f}")


if __name__ == "__main__":
    main()
