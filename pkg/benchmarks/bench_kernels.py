"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from forgelight import kernels, mesh


def cases():
    rng = np.random.default_rng(0)
    bar = mesh.two_neck_bar()
    tris = rng.uniform(-1, 1, size=(20000, 3, 2))
    ue = rng.normal(size=(8000, 8))
    A = rng.normal(size=(8, 8))
    return {
        "tet_geometry (12.8k tets)": ("tet_geometry", (bar.nodes, bar.elements)),
        "von_mises (100k x 6)": ("von_mises", (rng.normal(size=(100000, 6)),)),
        "disc_triangle_moments (20k)": ("disc_triangle_moments", (tris, 0.6)),
        "filter_grid (120x40, r=3)": ("filter_grid", (rng.random((40, 120)), 3.0)),
        "element_energy (8k quads)": ("element_energy", (ue, A @ A.T)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
    names = sorted(impls)
    print(f"{'kernel':32s}" + "".join(f"{n:>12s}" for n in names) + f"{'speedup':>10s}")
    for label, (fn, fargs) in cases().items():
        best = {}
        for n in names:
            f = getattr(impls[n], fn)
            f(*fargs)
            best[n] = min(timeit.repeat(lambda: f(*fargs), number=1, repeat=args.repeat))
        speed = best["python"] / best["compiled"] if "compiled" in best else float("nan")
        print(f"{label:32s}" + "".join(f"{best[n] * 1e3:10.2f}ms" for n in names) + f"{speed:9.1f}x")


if __name__ == "__main__":
    main()
