"""Compare both steady-state closures with simulation for NLMS on the reference channel.

Usage: python3 scripts/mswe_closure_check.py [TRIALS] [ITERS]
"""

import sys

import numpy as np

from lcapa import analysis, sim
from lcapa.sim import AlgorithmSpec


def main(trials=30, iters=3000):
    sc = sim.paper_scenario(n_iters=iters, n_trials=trials)
    print(f"{'mu':>6} {'simulated':>11} {'isotropic':>11} {'trace':>11}")
    for mu in (0.05, 0.1, 0.2, 0.4):
        spec = AlgorithmSpec.build("NLMS", 5, mu)
        m = analysis.estimate_moments(5, spec.config, "NLMS", None, 100_000, np.random.default_rng(0))
        pred = analysis.predict_mswe(sim.analysis_inputs(sc, spec, m), "isotropic")
        s = sim.run_monte_carlo(sc, [spec])["NLMS"].steady_state_weight_error()
        print(f"{mu:6.3f} {s:11.4e} {pred.t_mu:11.4e} {pred.t_paper:11.4e}")


if __name__ == "__main__":
    a = [int(v) for v in sys.argv[1:3]]
    main(*a)
