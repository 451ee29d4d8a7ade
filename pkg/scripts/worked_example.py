"""Walk the bundled worked example through both layers and print each stage."""

from rulebp.dsl import behaviour_to_json, dumps, scene_to_json
from rulebp.evaluator import apply_theory, infer, resolve_maneuver, transform_par
from rulebp.fixtures import SCENE_S, worked_example_config


def main():
    cfg = worked_example_config()
    fired = apply_theory(cfg.maneuver_theory, SCENE_S)
    resolved = resolve_maneuver(fired, cfg.order)
    par_scene = transform_par(resolved, cfg.parameter_schema)
    par_fired = apply_theory(cfg.parameter_theory, par_scene)
    behaviour, _ = infer(cfg, SCENE_S)

    def listing(bs):
        return sorted((behaviour_to_json(b) for b in bs), key=str)

    print(dumps({
        "scene": scene_to_json(SCENE_S),
        "maneuver_layer": listing(fired),
        "most_conservative": listing(resolved),
        "parameter_scene": scene_to_json(par_scene),
        "parameter_layer": listing(par_fired),
        "behaviour": behaviour_to_json(behaviour),
    }), end="")


if __name__ == "__main__":
    main()
