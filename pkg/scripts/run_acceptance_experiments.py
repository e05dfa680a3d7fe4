"""Train (or load from cache) every desk-scale model and print each trained-model check.

Usage: python scripts/run_acceptance_experiments.py [6 7 8 9 10]
"""
import sys
import time

from rotensemble.experiments import TRAINED_CHECKS


def main(argv):
    keys = argv or list(TRAINED_CHECKS)
    for key in keys:
        start = time.time()
        check = TRAINED_CHECKS[key](log=lambda it, loss: print(f"  iter {it} loss {loss:.5f}", flush=True))
        print(f"[{key}] {check.line()} ({time.time() - start:.0f} s)", flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
