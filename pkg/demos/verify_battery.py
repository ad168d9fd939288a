"""Run the numerical self-check battery on a few random instances.

Same checks as ``irs-crb verify``: closed-form FIM against finite
differences, surrogate gradients, the lifting identities and the
second-order Taylor remainder.
"""
from irs_crb.checks import format_table, run_battery


def main(seed=0, n=5):
    results = run_battery(seed=seed, n=n)
    print(format_table(results))
    ok = sum(r.passed for r in results)
    print(f"{ok}/{len(results)} checks passed")


if __name__ == "__main__":
    main()
