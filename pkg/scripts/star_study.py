"""Spatial resolution, noise floor and MEI on the star-like chirp.

    python3 scripts/star_study.py --sizes 10 20 --sigma 0.01 0.02 0.04
"""

import argparse

from cfedic.benchmarks import STAR_ALIGNMENTS, mei_table, noise_floor_resolution, star_spatial_resolution


def fmt(v, spec=".1f"):
    return "-" if v is None else format(v, spec)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--elements", nargs="+", default=["q4", "cfe"])
    ap.add_argument("--sizes", nargs="+", type=int, default=[10, 20])
    ap.add_argument("--sigma", nargs="+", type=float, default=[0.01, 0.02, 0.04])
    ap.add_argument("--shifts", nargs="+", type=float, default=list(STAR_ALIGNMENTS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("noise-free SR (px from the fine end of the cut)")
    res = star_spatial_resolution(args.elements, args.sizes, args.shifts, seed=args.seed)
    print("| method | h | " + " | ".join(f"shift {s:g}" for s in args.shifts) + " | mean | period at mean |")
    print("|---" * (len(args.shifts) + 4) + "|")
    for (el, h), r in res.items():
        per = [p for p in r.periods if p is not None]
        print(f"| {el} | {h} | " + " | ".join(fmt(p) for p in r.positions)
              + f" | {fmt(r.mean)} | {fmt(sum(per) / len(per) if per else None)} |")

    print("\nnoise-floor MR (std of v on the star centre row)")
    for s in args.sigma:
        mr = noise_floor_resolution(args.elements, args.sizes, s, args.seed)
        print(f"  sigma {s:g}: " + ", ".join(f"{el} h={h} {v:.4f}" for (el, h), v in mr.items()))

    for s in args.sigma:
        print(f"\nMEI at sigma {s:g}")
        table = mei_table(args.elements, args.sizes, s, args.seed, tuple(args.shifts))
        for (el, h), row in table.items():
            print(f"  {el:4s} h={h:3d}  SR {fmt(row['sr'])}  MR {row['mr']:.4f}  MEI {fmt(row['mei'], '.3f')}")


if __name__ == "__main__":
    main()
