"""Compare the adjoint gradient with central differences on a random network.

    python scripts/gradient_check.py [--system vanderpol] [--directions 10]
"""
import argparse

import numpy as np

from nnfeedback.feedback import Architecture, NetworkParams, nn_init
from nnfeedback.systems import build_system
from nnfeedback.training import EnsembleConfig, ensemble_gradient, ensemble_objective


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--system", default="vanderpol", choices=["lc_circuit", "vanderpol", "burgers"])
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--directions", type=int, default=10)
    parser.add_argument("--h", type=float, default=1e-5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    system = build_system(args.system)
    rng = np.random.default_rng(args.seed)
    arch = Architecture.uniform(system.n, system.m, args.layers, "softplus", True)
    theta = nn_init(arch, args.seed, 0.3)
    cfg = EnsembleConfig(rng.uniform(-1, 1, size=(3, system.n)), beta=0.1, T=1.0, n_steps=100, alpha_R=1e-2)
    grad, obj = ensemble_gradient(system, theta, cfg)
    print(f"objective {obj:.10g}, |grad| {grad.norm():.4g}")
    for _ in range(args.directions):
        d = NetworkParams.from_vector(arch, rng.normal(size=theta.to_vector().size))
        fd = (ensemble_objective(system, theta + d * args.h, cfg)
              - ensemble_objective(system, theta - d * args.h, cfg)) / (2 * args.h)
        print(f"adjoint {grad.dot(d): .12e}  fd {fd: .12e}  rel {abs(grad.dot(d) - fd) / abs(fd):.1e}")


if __name__ == "__main__":
    main()
