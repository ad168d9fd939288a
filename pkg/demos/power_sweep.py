"""Sweep the BS power budget and summarise the max-CRB per mode.

Writes sweep CSV/JSON files under ``demos/out`` through the same code path
as ``irs-crb sweep``, which prints the mean and SEM per point. Set
IRS_CRB_JOBS to run trials in parallel.
"""
from pathlib import Path

from irs_crb import cli


def main():
    out = Path(__file__).parent / "out" / "power_sweep.csv"
    out.parent.mkdir(exist_ok=True)
    cli.main(["sweep", "--sweep", "P_t", "--values", "1,10", "--modes", "Joint,TxOnly",
              "--trials", "2", "--seed", "0", "--out", str(out)])


if __name__ == "__main__":
    main()
