"""Time a 48-MIP linear projection with provenance of a 192x192x300 float volume."""
import argparse
import time

import numba
import numpy as np

from mipcore.projection import angular_plan, project_stack, set_workers
from mipcore.volume import Volume3D


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=48)
    parser.add_argument("--dims", type=int, nargs=3, default=(192, 192, 300), metavar=("NX", "NY", "NZ"))
    parser.add_argument("--interp", choices=("linear", "nearest"), default="linear")
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    set_workers(args.workers)
    nx, ny, nz = args.dims
    vol = Volume3D(np.random.default_rng(0).random((nz, ny, nx), dtype=np.float32))
    project_stack(Volume3D(vol.data[:2, :8, :8]), angular_plan(1), args.interp)  # JIT warm-up
    times = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        project_stack(vol, angular_plan(args.n), args.interp)
        times.append(time.perf_counter() - t0)
    print(f"{args.n} MIPs of {nx}x{ny}x{nz} ({args.interp}), {numba.get_num_threads()} thread(s): "
          f"median {sorted(times)[len(times) // 2]:.2f} s, best {min(times):.2f} s")


if __name__ == "__main__":
    main()
