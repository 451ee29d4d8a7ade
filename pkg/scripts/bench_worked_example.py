"""Inference throughput on the worked example, single- and multi-threaded.

Wraps ``rulebp bench`` over the bundled rules and a small cycle of scenes.
"""

import argparse
import json
import sys
import tempfile
from importlib import resources
from pathlib import Path

from rulebp import cli
from rulebp.fixtures import MANEUVER_SCHEMA, SCENE_S

VARIANTS = [
    {},
    {"Road.HasStopLine": None},
    {"Ego.Approaching": None, "Crosswalk.Obstructed": False},
    {"Ego.Approaching": None, "Ego.At": "Intersection"},
]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--threads", type=int, nargs="+", default=[1, 4])
    args = p.parse_args(argv)

    rules = str(resources.files("rulebp").joinpath("data", "worked_example_rules.json"))
    base = SCENE_S.to_python()
    scenes = [{**base, **v} for v in VARIANTS]
    assert all(set(s) == {str(f) for f in MANEUVER_SCHEMA.features} for s in scenes)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "scenes.json"
        path.write_text(json.dumps(scenes), encoding="utf-8")
        for threads in args.threads:
            code = cli.main(["bench", "--rules", rules, "--scenes", str(path),
                             "--iterations", str(args.iterations), "--threads", str(threads)])
            if code:
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
