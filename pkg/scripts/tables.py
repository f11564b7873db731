"""Train the network for a bundled experiment and print its comparison tables.

    python scripts/tables.py vanderpol
    python scripts/tables.py burgers [--variant cubic] [--skip-train]
"""
import argparse
import time
from pathlib import Path

from nnfeedback.cli import run_compare, run_train
from nnfeedback.config import bundled_config_path, load_config
from nnfeedback.evaluation import table_to_text


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=["lc_circuit", "vanderpol", "burgers"])
    parser.add_argument("--variant", default=None)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--skip-train", action="store_true", help="reuse an existing checkpoint")
    args = parser.parse_args()

    cfg = load_config(bundled_config_path(args.experiment))
    base = Path(args.out_dir or cfg.output_dir)
    runs = [(args.variant, cfg.variant(args.variant))] if args.variant else cfg.expand()
    for variant, sub in runs:
        out = base / variant if variant else base
        t0 = time.perf_counter()
        if not args.skip_train:
            s = run_train(sub, out, args.seed)
            print(f"[{sub.name}] {s['termination']} after {s['iterations']} iterations, J = {s['final_objective']:.4g}")
        print(table_to_text(run_compare(sub, out)))
        print(f"[{sub.name}] {time.perf_counter() - t0:.0f} s, results in {out}\n")


if __name__ == "__main__":
    main()
