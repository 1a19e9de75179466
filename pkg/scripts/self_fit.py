"""ECM self-consistency fit: simulate the chain with the reference
parameters, then fit all nine parameters back by differential evolution.

    python scripts/self_fit.py --population 45 --mutation 0.5 --evals 60000 --seed 0

Prints the best loss and the relative parameter errors every 10 generations.
"""
import argparse
import time

import numpy as np

from lirecon.de import DeSettings
from lirecon.ecm import params_to_vector, reference_parameters
from lirecon.fit import ECM_NAMES, FitObjectiveSpec, fit_ecm
from lirecon.protocol import reconditioning_protocol
from lirecon.simulate import run_protocol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--population", type=int, default=45)
    ap.add_argument("--mutation", type=float, default=0.5)
    ap.add_argument("--crossover", type=float, default=0.9)
    ap.add_argument("--evals", type=int, default=60_000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    p = reference_parameters()
    proto = reconditioning_protocol()
    ref = run_protocol(p, p.initial_state(), proto, max_repetitions=3)
    truth = params_to_vector(p)
    # relative error for the five scale parameters, absolute for the four z
    scale = np.where(np.arange(9) < 5, truth, 1.0)
    t0 = time.perf_counter()

    def progress(gen, x, loss):
        if gen % 10 == 0:
            err = np.round((x - truth) / scale, 3)
            print(f"gen {gen} t {time.perf_counter() - t0:.0f}s loss {loss:.4e} err {err}",
                  flush=True)

    settings = DeSettings(population=a.population, mutation=a.mutation, crossover=a.crossover,
                          max_evaluations=a.evals, tol=0.0, seed=a.seed)
    res = fit_ecm(FitObjectiveSpec(proto, ref), settings=settings, callback=progress)
    print(f"loss {res.loss:.4e} after {res.evaluations} evaluations "
          f"({time.perf_counter() - t0:.0f} s)")
    for name, v, t in zip(ECM_NAMES, res.x, truth):
        print(f"{name:>10} {v:.6g} (generating {t:.6g})")


if __name__ == "__main__":
    main()
