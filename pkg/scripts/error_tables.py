"""RMSE / L2 error tables on the sinusoidal presets.

    python3 scripts/error_tables.py example1 --seeds 0 1 2 3 4
    python3 scripts/error_tables.py example2 --methods q4:8 cfe:8 q8:16
"""

import argparse

import numpy as np

from cfedic.benchmarks import error_table
from cfedic.metrics import markdown_table

DEFAULTS = {"example1": ["q4:20", "cfe:20"], "example2": ["q4:8", "cfe:8", "q8:16"]}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("preset", choices=sorted(DEFAULTS))
    ap.add_argument("--methods", nargs="+", help="element:h pairs")
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--bits", type=int, default=8, help="quantization depth, 0 keeps float images")
    args = ap.parse_args()

    methods = [(m.split(":")[0], int(m.split(":")[1])) for m in (args.methods or DEFAULTS[args.preset])]
    per_seed = []
    for seed in args.seeds:
        rows = error_table(args.preset, methods, seed=seed, bits=args.bits or None)
        per_seed.append(rows)
        print(f"\n{args.preset}, seed {seed}, bits {args.bits or 'float'}")
        print(markdown_table(rows))
        for r in rows:
            t = r["timings"]
            print(f"  {r['method']:<16} pcg {sum(r['pcg_iterations']):4d} it  residual {r['residual']:.1e}  "
                  f"assemble {t.get('assembly', 0):.2f}s solve {t.get('solve', 0):.2f}s")
    if len(args.seeds) > 1:
        print("\nmean over seeds")
        mean = [dict(r, **{k: float(np.mean([s[i][k] for s in per_seed])) for k in ("rmse_u", "l2_u", "rmse_exx", "l2_exx")})
                for i, r in enumerate(per_seed[0])]
        print(markdown_table(mean))


if __name__ == "__main__":
    main()
