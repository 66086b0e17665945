"""Benchmark the numba element kernels against their pure-numpy twins.

Usage:
    python benchmarks/bench_kernels.py [--n 65] [--repeats 20]

Times every kernel on a random field state at the given mesh resolution
and additionally one full splitting time step per backend.  The numba
variants are warmed up first so compilation is not measured.
"""

import argparse
import time

import numpy as np

from chbfem import _kernels as kn
from chbfem.mesh import build_unit_square_mesh
from chbfem.model import MaterialParams
from chbfem.solvers import ChbSystem, SolverConfig


def kernel_args(system, params, state, name):
    phi_q = system.phi_at_qp(state["phi"])
    strain = system.strain_per_cell(state["u"])
    pa = params
    if name in ("ch_load", "ch_jac"):
        return (phi_q, system.wq, system.lam, strain, state["p"], pa.gamma,
                pa.ell, pa.xi, pa.phi_bar, pa.M0, pa.M1, pa.alpha0, pa.alpha1,
                pa.C0, pa.dC)
    if name == "phase_cell_integrals":
        return (phi_q, system.wq, pa.phi_bar, pa.M0, pa.M1)
    if name == "rt0_weighted_mass":
        return (phi_q, system.wq, system.psi_q, pa.kappa0, pa.kappa1)
    if name == "coupling_blocks":
        qloc = np.ascontiguousarray(state["q"][system.qdofs])
        return (phi_q, system.wq, system.lam, strain, state["p"], qloc,
                system.B, system.psi_q, pa.xi, pa.phi_bar, pa.M0, pa.M1,
                pa.alpha0, pa.alpha1, pa.kappa0, pa.kappa1, pa.C0, pa.dC)
    raise KeyError(name)


def best_of(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=65, help="cells per side")
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    mesh = build_unit_square_mesh(args.n)
    params = MaterialParams()
    system = ChbSystem(mesh, params)
    rng = np.random.default_rng(0)
    state = {
        "phi": rng.uniform(-0.2, 1.2, system.nv),
        "u": rng.normal(0.0, 0.01, 2 * system.nv),
        "p": rng.normal(0.0, 0.1, system.nc),
        "q": rng.normal(0.0, 0.1, system.ne),
    }

    print(f"mesh n={args.n}: {mesh.num_cells} cells, "
          f"{system.ndofs} coupled dofs, best of {args.repeats} runs")
    if kn.NUMBA_KERNELS is None:
        print("numba not installed; only the numpy backend is available")
        return

    header = f"{'kernel':24s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name in sorted(kn.NUMPY_KERNELS):
        a = kernel_args(system, params, state, name)
        kn.NUMBA_KERNELS[name](*a)  # compile before timing
        t_np = best_of(kn.NUMPY_KERNELS[name], a, args.repeats)
        t_nb = best_of(kn.NUMBA_KERNELS[name], a, args.repeats)
        print(f"{name:24s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms "
              f"{t_np / t_nb:7.1f}x")

    cfg = SolverConfig(strategy="splitting", num_steps=1)
    state0 = system.initial_state()
    previous = kn.active_backend()
    print()
    for backend in ("numpy", "numba"):
        kn.use_backend(backend)
        t0 = time.perf_counter()
        _, stats = system.splitting_step(state0, cfg)
        elapsed = time.perf_counter() - t0
        print(f"splitting step ({backend:5s}): {elapsed:6.2f}s "
              f"({stats.outer_iters} outer iterations)")
    kn.use_backend(previous)


if __name__ == "__main__":
    main()
