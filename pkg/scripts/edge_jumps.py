"""Inter-element jumps of displacement and strain on a solved field.

Samples points along interior element edges, evaluates the field from both
sides and prints the largest jump of each quantity, split into the component
normal to the edge and the tangential one, and at mesh nodes versus edge
interiors.

    python3 scripts/edge_jumps.py --element cfe --h 20
"""

import argparse

import numpy as np

from cfedic.benchmarks import quantize
from cfedic.dic import DicConfig, run_dic
from cfedic.mesh import ZoneOfInterest
from cfedic.postprocess import interpolate
from cfedic.synth import preset, render_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--element", default="cfe")
    ap.add_argument("--h", type=int, default=20)
    ap.add_argument("--random", action="store_true", help="replace the DIC solution by random nodal values")
    args = ap.parse_args()

    p = preset("example1")
    _, ref, deformed = render_pair(p, 0)
    zoi = ZoneOfInterest(*p.zoi)
    sol = run_dic(quantize(ref), quantize(deformed), zoi, DicConfig(element=args.element, element_size=args.h))
    nodal = np.random.default_rng(0).normal(size=sol.nodal.shape) if args.random else sol.nodal
    h, eps = args.h, 1e-9
    n = zoi.width // h
    along = np.linspace(0, h, 21)
    xs = zoi.x0 + h * np.arange(3, n - 2)
    # vertical edges x = const, sampled in y across one element row
    y0 = zoi.y0 + h * (n // 2)
    pts = np.array([[x, y0 + t] for x in xs for t in along], dtype=float)
    at_node = np.tile(np.isin(np.arange(len(along)), [0, len(along) - 1]), len(xs))
    normal = np.array([1.0, 0.0])
    (va, ga), (vb, gb) = (interpolate(sol.conn, nodal, pts + s * eps * normal, True) for s in (-1, 1))
    typical = np.abs(ga).max()
    print(f"{sol.conn.label}, {'random nodal data' if args.random else 'DIC solution'}, {len(pts)} points on vertical edges")
    print(f"  displacement jump      {np.abs(va - vb).max():.2e}")
    for name, d in (("normal d/dx", 0), ("tangential d/dy", 1)):
        jump = np.abs(ga[..., d] - gb[..., d]).max(axis=1)
        print(f"  {name:16s} jump: at nodes {jump[at_node].max():.2e}, edge interior {jump[~at_node].max():.2e}"
              f"  (typical gradient {typical:.2e})")


if __name__ == "__main__":
    main()
