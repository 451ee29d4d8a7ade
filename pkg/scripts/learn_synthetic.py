"""Learn both layers from empty theories on generated datasets.

One CSV line per run: seed, scenes, features, heuristic, learned rule counts,
outer iterations, wall time and whether every training scene is reproduced.

    python3 scripts/learn_synthetic.py --runs 20 --heuristic laplace
"""

import argparse
import csv
import sys
import time
from dataclasses import dataclass

from rulebp.evaluator import EngineConfig
from rulebp.learning import MANEUVER, PARAMETER, Heuristic, learn_engine, misclassified
from rulebp.synthetic import generate_problem


@dataclass
class SweepConfig:
    runs: int = 100
    first_seed: int = 0
    min_scenes: int = 50
    max_scenes: int = 500
    min_features: int = 10
    max_features: int = 30
    heuristic: Heuristic = Heuristic.LAPLACE
    workers: int = 1

    def case(self, i: int) -> tuple[int, int, int]:
        seed = self.first_seed + i
        span_n = self.max_scenes - self.min_scenes + 1
        span_f = self.max_features - self.min_features + 1
        return seed, self.min_scenes + (seed * 37) % span_n, self.min_features + (seed * 7) % span_f


def run(cfg: SweepConfig, out=sys.stdout) -> int:
    writer = csv.writer(out)
    writer.writerow(["seed", "scenes", "features", "heuristic", "maneuver_rules",
                     "parameter_rules", "iterations", "seconds", "clean"])
    failures = 0
    for i in range(cfg.runs):
        seed, n, f = cfg.case(i)
        prob = generate_problem(seed, n, f)
        bm, bp = prob.empty_bases()
        t0 = time.perf_counter()
        res = learn_engine(prob.dataset, bm, bp, prob.order, seed, cfg.heuristic,
                           workers=cfg.workers)
        elapsed = time.perf_counter() - t0
        engine = EngineConfig(res.maneuver, res.parameter, prob.order)
        clean = not (misclassified(res.maneuver, MANEUVER, engine, prob.dataset)
                     or misclassified(res.parameter, PARAMETER, engine, prob.dataset))
        failures += not clean
        writer.writerow([seed, n, f, cfg.heuristic.value, len(res.maneuver), len(res.parameter),
                         sum(res.iterations.values()), f"{elapsed:.3f}", clean])
        out.flush()
    return failures


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=SweepConfig.runs)
    p.add_argument("--first-seed", type=int, default=SweepConfig.first_seed)
    p.add_argument("--heuristic", choices=[h.value for h in Heuristic],
                   default=SweepConfig.heuristic.value)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args(argv)
    cfg = SweepConfig(runs=args.runs, first_seed=args.first_seed,
                      heuristic=Heuristic(args.heuristic), workers=args.workers)
    return 1 if run(cfg) else 0


if __name__ == "__main__":
    sys.exit(main())
