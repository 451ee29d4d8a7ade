"""Command-line interface.

Exit codes: 0 success, 1 engine error (or misclassified scenes for ``check``),
2 input error, 3 bad base rules, 4 iteration budget exceeded, 5 discrepancy
found. Every error is also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import service
from .diagnosis import detect_discrepancy, find_conflicting_scenes
from .dsl import (
    COMPLETING,
    STRICT,
    Schemas,
    _load_json,
    behaviour_from_json,
    behaviour_to_json,
    dumps,
    load_config,
    parse_dataset_document,
    scene_from_json,
    serialize_rule_document,
)
from .errors import InputError, RuleEngineError
from .evaluator import EngineConfig, infer
from .learning import (
    MANEUVER,
    PARAMETER,
    BadBaseRules,
    Heuristic,
    IterationBudgetExceeded,
    learn_engine,
    misclassified,
)
from .model import Theory

EXIT_OK = 0
EXIT_ENGINE = 1
EXIT_INPUT = 2
EXIT_BAD_BASE = 3
EXIT_BUDGET = 4
EXIT_DISCREPANCY = 5


class CliInputError(InputError):
    kind = "usage-error"


def _emit_error(err: dict):
    sys.stderr.write(json.dumps({"error": err}, ensure_ascii=False) + "\n")


def _print(obj):
    sys.stdout.write(dumps(obj))
    sys.stdout.flush()


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliInputError(f"cannot read {path}: {exc}") from None


def _config(path) -> EngineConfig:
    return load_config(_read(path))


def _scene_list(cfg: EngineConfig, path, mode):
    doc = _load_json(_read(path), "scene document")
    items = doc if isinstance(doc, list) else [doc]
    if not items:
        raise CliInputError(f"{path} holds no scene")
    return [scene_from_json(obj, cfg.maneuver_schema, mode, f"[{i}]")
            for i, obj in enumerate(items)]


# -- commands ---------------------------------------------------------------

def cmd_infer(args) -> int:
    cfg = _config(args.rules)
    scene = scene_from_json(_load_json(_read(args.scene), "scene document"),
                            cfg.maneuver_schema, args.mode)
    response = service.respond(cfg, scene, args.trace)
    _print(response)
    if "error" in response:
        _emit_error(response["error"])
        return EXIT_ENGINE
    return EXIT_OK


def _base_theories(args, records_doc):
    if args.base_rules:
        cfg = _config(args.base_rules)
        schemas = Schemas.of(cfg)
        dataset, _, _ = parse_dataset_document(records_doc, schemas, args.mode)
        return dataset, cfg.maneuver_theory, cfg.parameter_theory, cfg.order
    dataset, schemas, order = parse_dataset_document(records_doc, None, args.mode)
    base_man = Theory("maneuver", schemas.maneuver, schemas.parameter, ())
    base_par = Theory("parameter", schemas.parameter, schemas.output, ())
    return dataset, base_man, base_par, order or EngineConfig(base_man, base_par).order


def cmd_learn(args) -> int:
    dataset, base_man, base_par, order = _base_theories(args, _read(args.dataset))
    result = learn_engine(dataset, base_man, base_par, order, args.seed,
                          Heuristic(args.heuristic), max_iterations=args.max_iterations,
                          workers=args.workers)
    cfg = EngineConfig(result.maneuver, result.parameter, order)
    try:
        Path(args.out).write_text(serialize_rule_document(cfg), encoding="utf-8")
    except OSError as exc:
        raise CliInputError(f"cannot write {args.out}: {exc}") from None
    _print({
        "maneuver_rules": len(result.maneuver),
        "parameter_rules": len(result.parameter),
        "outer_iterations": result.iterations,
        "bad_rules": result.bad_rules,
    })
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = _config(args.rules)
    dataset, _, _ = parse_dataset_document(_read(args.dataset), Schemas.of(cfg), args.mode)
    report = {
        MANEUVER: sorted(misclassified(cfg.maneuver_theory, MANEUVER, cfg, dataset)),
        PARAMETER: sorted(misclassified(cfg.parameter_theory, PARAMETER, cfg, dataset)),
    }
    _print({"scenes": len(dataset), "misclassified": report})
    return EXIT_OK if not any(report.values()) else EXIT_ENGINE


def _desired(cfg: EngineConfig, path):
    doc = _load_json(_read(path), "desired behaviour")
    if isinstance(doc, dict) and "final_label" in doc:
        final = behaviour_from_json(doc["final_label"], "final_label",
                                    cfg.parameter_theory.output_schema)
        man = doc.get("maneuver_label")
        if man is not None:
            man = behaviour_from_json(man, "maneuver_label", cfg.parameter_schema)
        return final, man
    return behaviour_from_json(doc, "", cfg.parameter_theory.output_schema), None


def cmd_diagnose(args) -> int:
    cfg = _config(args.rules)
    dataset, _, _ = parse_dataset_document(_read(args.dataset), Schemas.of(cfg), args.mode)
    scene = scene_from_json(_load_json(_read(args.scene), "scene document"),
                            cfg.maneuver_schema, args.mode)
    desired, man_label = _desired(cfg, args.desired)
    found = detect_discrepancy(cfg, scene, desired)
    if not found.found:
        _print({"discrepancy": False, "actual": behaviour_to_json(found.actual)})
        return EXIT_OK
    report = find_conflicting_scenes(cfg, dataset, scene, desired, maneuver_label=man_label)
    _print(report.to_json(cfg.order))
    return EXIT_DISCREPANCY


def _percentile(sorted_xs, q):
    # nearest rank
    return sorted_xs[max(0, math.ceil(q * len(sorted_xs)) - 1)]


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise CliInputError("--iterations must be at least 1")
    if args.threads < 1:
        raise CliInputError("--threads must be at least 1")
    cfg = _config(args.rules)
    scenes = _scene_list(cfg, args.scenes, args.mode)

    def one(i):
        scene = scenes[i % len(scenes)]
        t0 = time.perf_counter()
        try:
            out = behaviour_to_json(infer(cfg, scene)[0])
        except RuleEngineError as exc:
            out = {"error": exc.kind}
        return i, time.perf_counter() - t0, out

    start = time.perf_counter()
    if args.threads == 1:
        results = [one(i) for i in range(args.iterations)]
    else:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(one, range(args.iterations)))
    total = time.perf_counter() - start
    lat = sorted(dt for _, dt, _ in results)
    outputs = {}
    for i, _, out in results:
        outputs.setdefault(i % len(scenes), out)
    _print({
        "iterations": args.iterations,
        "threads": args.threads,
        "scenes": len(scenes),
        "total_s": total,
        "mean_ms": statistics.fmean(lat) * 1e3,
        "median_ms": statistics.median(lat) * 1e3,
        "p99_ms": _percentile(lat, 0.99) * 1e3,
        "rate_per_s": args.iterations / total if total > 0 else float("inf"),
        "outputs": [outputs[k] for k in sorted(outputs)],
    })
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _config(args.rules)
    if args.stdio:
        service.serve_stdio(cfg, sys.stdin, sys.stdout, args.mode)
        return EXIT_OK
    host, _, port = args.listen.rpartition(":")
    try:
        server = service.make_http_server(cfg, host or "127.0.0.1", int(port), args.mode)
    except (OSError, ValueError) as exc:
        raise CliInputError(f"cannot listen on {args.listen}: {exc}") from None
    logging.getLogger(__name__).info("serving on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rulebp",
                                description="Two-layer rule engine for behaviour planning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def mode(sp):
        sp.add_argument("--mode", choices=(STRICT, COMPLETING), default=STRICT,
                        help="reject partial scenes, or fill missing features with undefined")

    sp = sub.add_parser("infer", help="run the engine on one scene")
    sp.add_argument("--rules", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--trace", action="store_true")
    mode(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("learn", help="learn both theories from a labelled dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--base-rules")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--heuristic", choices=[h.value for h in Heuristic],
                    default=Heuristic.LAPLACE.value)
    sp.add_argument("--max-iterations", type=int, default=10**6)
    sp.add_argument("--workers", type=int, default=1, help="threads for candidate scoring")
    mode(sp)
    sp.set_defaults(func=cmd_learn)

    sp = sub.add_parser("check", help="list misclassified training scenes per layer")
    sp.add_argument("--rules", required=True)
    sp.add_argument("--dataset", required=True)
    mode(sp)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("diagnose", help="explain a discrepancy scene")
    sp.add_argument("--rules", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--desired", required=True)
    mode(sp)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("bench", help="measure inference throughput")
    sp.add_argument("--rules", required=True)
    sp.add_argument("--scenes", required=True)
    sp.add_argument("--iterations", type=int, default=10_000)
    sp.add_argument("--threads", type=int, default=1)
    mode(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("serve", help="serve inference over HTTP or stdio")
    sp.add_argument("--rules", required=True)
    where = sp.add_mutually_exclusive_group(required=True)
    where.add_argument("--listen", metavar="HOST:PORT")
    where.add_argument("--stdio", action="store_true")
    mode(sp)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            _emit_error({"kind": "usage-error", "detail": "invalid command line"})
            return EXIT_INPUT
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BadBaseRules as exc:
        err = exc.to_json()
        err.update(layer=exc.layer, rule=exc.rule.id)
        _emit_error(err)
        return EXIT_BAD_BASE
    except IterationBudgetExceeded as exc:
        _emit_error(exc.to_json())
        return EXIT_BUDGET
    except InputError as exc:
        _emit_error(service.error_json(exc))
        return EXIT_INPUT
    except RuleEngineError as exc:
        _emit_error(exc.to_json())
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
