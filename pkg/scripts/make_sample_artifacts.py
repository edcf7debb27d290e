#!/usr/bin/env python3
"""Generate the sample artifacts consumed by the figures package's tests.

Runs the default Lorenz-96 twin experiment once per method (serial,
parallel, hybrid) plus a small weak-scaling benchmark, writing the CSV/JSON
artifacts under figures/sample_artifacts/.
"""

import argparse
import os
import sys

from tp4dvar import cli

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, "..", "configs", "lorenz96.yaml")
DEFAULT_OUT = os.path.join(HERE, "..", "figures", "sample_artifacts")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=DEFAULT_CONFIG)
    parser.add_argument("--out", default=DEFAULT_OUT)
    args = parser.parse_args()

    for method in ("serial", "parallel", "hybrid"):
        out_dir = os.path.join(args.out, method)
        code = cli.main(
            [
                "run",
                "--config", args.config,
                "--set", f"experiment.method={method}",
                "--out", out_dir,
            ]
        )
        if code != 0:
            sys.exit(code)
        print(f"wrote {out_dir}")

    code = cli.main(
        [
            "bench-scaling",
            "--config", args.config,
            "--k-list", "1,2,4",
            "--workers-policy", "fixed",
            "--out", args.out,
        ]
    )
    if code != 0:
        sys.exit(code)
    print(f"wrote {os.path.join(args.out, 'scaling.csv')}")


if __name__ == "__main__":
    main()
