"""Stiffness density and run cost against element size on example 1.

    python3 scripts/cost_sparsity.py --sizes 10 20 40
"""

import argparse
import time

from cfedic.benchmarks import quantize
from cfedic.dic import DicConfig, build_models, run_dic
from cfedic.mesh import ZoneOfInterest, build_connectivity, build_mesh, sparsity_pattern_density
from cfedic.shapes import CfeParams
from cfedic.synth import preset, render_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", nargs="+", type=int, default=[10, 20, 40])
    args = ap.parse_args()

    p = preset("example1")
    _, ref, deformed = render_pair(p, 0)
    ref, deformed = quantize(ref), quantize(deformed)
    zoi = ZoneOfInterest(*p.zoi)
    models = build_models(ref, deformed, DicConfig())
    kinds = {"q4": "q4", "q8": "q8", "cfe s=1": CfeParams(2, 1, 8.0), "cfe s=2": CfeParams(2, 2, 8.0)}
    print("| method | h | nodes | density | pcg it | assemble s | solve s | total s |")
    print("|---|---|---|---|---|---|---|---|")
    for h in args.sizes:
        mesh = build_mesh(zoi, h)
        for label, kind in kinds.items():
            density = sparsity_pattern_density(build_connectivity(mesh, kind))
            cfg = DicConfig(element=label.split()[0], element_size=h,
                            patch_size=int(label[-1]) if label.startswith("cfe") else 2)
            t0 = time.perf_counter()
            sol = run_dic(ref, deformed, zoi, cfg, models=models)
            total = time.perf_counter() - t0
            t = sol.timings
            print(f"| {label} | {h} | {sol.n_nodes} | {density:.4f} | {sum(sol.iterations)} | "
                  f"{t.get('assembly', 0):.2f} | {t.get('solve', 0):.2f} | {total:.2f} |")


if __name__ == "__main__":
    main()
