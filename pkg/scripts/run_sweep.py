"""MIP-count sweep on a phantom: projection cost and annotation retention per N.

Thin wrapper over ``mipcore sweep`` that also prints the table.
"""
import argparse
import sys
from pathlib import Path

from mipcore import cli
from mipcore.io import read_report


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--spec", default="configs/phantom_example.txt")
    parser.add_argument("--out", default="runs/sweep")
    parser.add_argument("--n-list", default="16,32,48,64,80")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    code = cli.main(["sweep", "--phantom", args.spec, "--n-list", args.n_list,
                     "--repeats", str(args.repeats), "--out", args.out])
    if code:
        sys.exit(code)
    _, rows = read_report(Path(args.out) / cli.SWEEP_FILE)
    cols = cli.SWEEP_COLUMNS
    print("\n" + "  ".join(f"{c:>22}" for c in cols))
    for r in rows:
        print("  ".join(f"{r[c]:>22}" for c in cols))


if __name__ == "__main__":
    main()
