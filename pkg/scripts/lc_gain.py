"""Train the single-layer network on the LC circuit and compare with LQR.

    python scripts/lc_gain.py [--out-dir runs/lc_circuit]
"""
import argparse
from pathlib import Path

import numpy as np

from nnfeedback.cli import run_train
from nnfeedback.config import bundled_config_path, load_config


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="runs/lc_circuit")
    args = parser.parse_args()
    cfg = load_config(bundled_config_path("lc_circuit"))
    s = run_train(cfg, Path(args.out_dir))
    learned, riccati = np.array(s["learned_gain"][0]), np.array(s["riccati_gain"][0])
    print(f"{s['termination']} after {s['iterations']} iterations ({s['runtime_s']:.1f} s), |g| = {s['final_grad_norm']:.2e}")
    print("learned gain ", np.array2string(learned, precision=4))
    print("Riccati gain ", np.array2string(riccati, precision=4))
    print("relative gap ", np.array2string(np.abs(learned - riccati) / np.abs(riccati), precision=2))


if __name__ == "__main__":
    main()
