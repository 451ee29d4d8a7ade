"""Text syntax for constraints and the JSON documents for rules, scenes and datasets.

Constraint grammar::

    constraint := "TRUE" | feature op operand
    feature    := IDENT "." IDENT
    op         := "=" | "<=" | ">="
    operand    := feature | "true" | "false" | "undefined" | NUMBER | STRING

JSON literals map to values as: boolean -> boolean, number -> number,
string -> symbol, null -> undefined.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .errors import InputError, SceneValidationError, SchemaError
from .evaluator import EngineConfig
from .model import (
    DEFAULT_ORDER,
    TRUE,
    UNDEFINED,
    Antecedent,
    Behaviour,
    ConservativenessOrder,
    Feature,
    FeatureFeature,
    FeatureKind,
    FeatureValue,
    LayerSchema,
    Maneuver,
    Op,
    Rule,
    Scene,
    Theory,
    Value,
    complete_scene,
)

log = logging.getLogger(__name__)

VERSION = 1


class DslParseError(InputError):
    kind = "parse-error"

    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = f"{message} at byte {offset}"
        if self.expected:
            detail += f" (expected {', '.join(self.expected)})"
        super().__init__(detail)


class DocumentError(InputError):
    """Invalid document; ``path`` locates the offending element."""

    kind = "document-error"

    def __init__(self, message, path="", rule_id=None):
        self.path = path
        self.rule_id = rule_id
        where = path
        if rule_id is not None:
            where = f"{path} (rule {rule_id!r})" if path else f"rule {rule_id!r}"
        super().__init__(f"{where}: {message}" if where else message)


class LabelConflictError(InputError):
    kind = "label-conflict"

    def __init__(self, first, second):
        self.indices = (first, second)
        super().__init__(
            f"records {first} and {second} have identical scenes but different labels"
        )


# -- constraint text -------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<op><=|>=|=)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_-]*)
  | (?P<dot>\.)
  | (?P<string>"(?:[^"\\]|\\.)*")
""", re.VERBOSE)

_OPS = {"=": Op.EQ, "<=": Op.LE, ">=": Op.GE}
_OPERAND = {"feature", "number", "string", "true", "false", "undefined"}


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            chunk, kind = text[pos], "invalid"
        else:
            chunk, kind = m.group(), m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, chunk, byte))
        byte += len(chunk.encode("utf-8", "surrogatepass"))
        pos += len(chunk)
    tokens.append(_Token("end", "", byte))
    return tokens


class _ConstraintParser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, ahead=0):
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def take(self, kind, expected):
        tok = self.peek()
        if tok.kind != kind:
            self.fail(tok, expected)
        self.i += 1
        return tok

    def fail(self, tok, expected):
        what = "end of input" if tok.kind == "end" else f"{tok.text!r}"
        raise DslParseError(f"unexpected {what}", tok.offset, expected)

    def feature(self):
        obj = self.take("ident", {"identifier"})
        self.take("dot", {"'.'"})
        attr = self.take("ident", {"identifier"})
        return Feature(obj.text, attr.text)

    def parse(self):
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "TRUE" and self.peek(1).kind == "end":
            self.i += 1
            return TRUE
        if not (tok.kind == "ident" and self.peek(1).kind == "dot"):
            self.fail(tok, {"TRUE", "feature"})
        lhs = self.feature()
        op = _OPS[self.take("op", {"'='", "'<='", "'>='"}).text]
        rhs = self.operand()
        end = self.peek()
        if end.kind != "end":
            self.fail(end, {"end of input"})
        if isinstance(rhs, Feature):
            return FeatureFeature(lhs, op, rhs)
        if rhs.is_undefined and op is not Op.EQ:
            raise DslParseError("only '=' may compare against undefined", tok.offset)
        return FeatureValue(lhs, op, rhs)

    def operand(self):
        tok = self.peek()
        if tok.kind == "ident":
            if self.peek(1).kind == "dot":
                return self.feature()
            self.i += 1
            if tok.text == "true":
                return Value.boolean(True)
            if tok.text == "false":
                return Value.boolean(False)
            if tok.text == "undefined":
                return UNDEFINED
            self.i -= 1
            self.fail(tok, _OPERAND)
        if tok.kind == "number":
            self.i += 1
            try:
                return Value.number(float(tok.text))
            except ValueError:
                raise DslParseError("number out of range", tok.offset) from None
        if tok.kind == "string":
            self.i += 1
            body = re.sub(r"\\(.)", r"\1", tok.text[1:-1])
            if not body:
                raise DslParseError("empty symbol", tok.offset)
            return Value.symbol(body)
        self.fail(tok, _OPERAND)


def parse_constraint_text(text: str):
    return _ConstraintParser(text).parse()


def format_constraint(c) -> str:
    return str(c)


# -- JSON helpers ------------------------------------------------------------

def value_from_json(x, path="") -> Value:
    if isinstance(x, (bool, int, float, str)) or x is None:
        try:
            return Value.of(x)
        except (TypeError, ValueError) as exc:
            raise DocumentError(str(exc), path) from None
    raise DocumentError(f"expected a scalar literal, got {type(x).__name__}", path)


def value_to_json(v: Value):
    return v.to_python()


def _load_json(data, what):
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DocumentError(f"{what} is not UTF-8: {exc}") from None
    if isinstance(data, str):
        try:
            return json.loads(data)
        except json.JSONDecodeError as exc:
            offset = len(data[:exc.pos].encode("utf-8"))
            raise DslParseError(f"invalid JSON in {what}: {exc.msg}", offset) from None
    return data


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _feature(text, path):
    try:
        return Feature.parse(text)
    except (ValueError, AttributeError) as exc:
        raise DocumentError(str(exc), path) from None


def schema_from_json(layer_id, obj, path) -> LayerSchema:
    if not isinstance(obj, dict):
        raise DocumentError("schema must be an object of feature -> kind", path)
    declared = []
    for name, kind in obj.items():
        try:
            declared.append((_feature(name, f"{path}.{name}"), FeatureKind(kind)))
        except ValueError:
            raise DocumentError(f"unknown kind {kind!r}", f"{path}.{name}") from None
    try:
        return LayerSchema(layer_id, tuple(declared))
    except SchemaError as exc:
        raise DocumentError(str(exc), path) from None


def schema_to_json(schema: LayerSchema) -> dict:
    return {str(f): k.value for f, k in schema.declared}


def behaviour_from_json(obj, path="", schema: LayerSchema | None = None, rule_id=None):
    if not isinstance(obj, dict) or "maneuver" not in obj:
        raise DocumentError("behaviour needs a 'maneuver'", path, rule_id)
    unknown = set(obj) - {"maneuver", "params"}
    if unknown:
        raise DocumentError(f"unexpected keys {sorted(unknown)}", path, rule_id)
    try:
        maneuver = Maneuver(obj["maneuver"])
    except ValueError:
        raise DocumentError(
            f"unknown maneuver {obj['maneuver']!r}", f"{path}.maneuver", rule_id
        ) from None
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise DocumentError("params must be an object", f"{path}.params", rule_id)
    values = {}
    for name, lit in params.items():
        ppath = f"{path}.params.{name}"
        feat = _feature(name, ppath)
        value = value_from_json(lit, ppath)
        if schema is not None:
            try:
                schema.check_property(feat, value)
            except SchemaError as exc:
                raise DocumentError(str(exc), ppath, rule_id) from None
        values[feat] = value
    return Behaviour.of(maneuver, values)


def behaviour_to_json(b: Behaviour) -> dict:
    return b.to_python()


# -- rule documents ------------------------------------------------------------

@dataclass
class RuleDocument:
    maneuver_schema: LayerSchema
    parameter_schema: LayerSchema
    output_schema: LayerSchema
    order: ConservativenessOrder = DEFAULT_ORDER
    maneuver_rules: list = field(default_factory=list)
    parameter_rules: list = field(default_factory=list)
    version: int = VERSION

    def to_config(self) -> EngineConfig:
        man = Theory("maneuver", self.maneuver_schema, self.parameter_schema, self.maneuver_rules)
        par = Theory("parameter", self.parameter_schema, self.output_schema, self.parameter_rules)
        return EngineConfig(man, par, self.order)

    @staticmethod
    def from_config(cfg: EngineConfig) -> RuleDocument:
        return RuleDocument(
            cfg.maneuver_schema,
            cfg.parameter_schema,
            cfg.parameter_theory.output_schema,
            cfg.order,
            list(cfg.maneuver_theory.rules),
            list(cfg.parameter_theory.rules),
        )


def _rule_from_json(obj, path, in_schema, out_schema, ids):
    if not isinstance(obj, dict):
        raise DocumentError("rule must be an object", path)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise DocumentError("rule needs a non-empty string 'id'", f"{path}.id")
    if rid in ids:
        raise DocumentError("duplicate rule id", path, rid)
    ids.add(rid)
    unknown = set(obj) - {"id", "if", "then"}
    if unknown:
        raise DocumentError(f"unexpected keys {sorted(unknown)}", path, rid)
    conds = obj.get("if")
    if not isinstance(conds, list) or not conds:
        raise DocumentError("'if' must be a non-empty list of constraints", f"{path}.if", rid)
    constraints = []
    for j, text in enumerate(conds):
        cpath = f"{path}.if[{j}]"
        if not isinstance(text, str):
            raise DocumentError("constraint must be a string", cpath, rid)
        try:
            c = parse_constraint_text(text)
        except DslParseError as exc:
            raise DocumentError(str(exc), cpath, rid) from None
        for feat in c.features():
            if feat not in in_schema:
                raise DocumentError(
                    f"unknown feature {feat} for the {in_schema.layer_id} schema", cpath, rid
                )
        constraints.append(c)
    if "then" not in obj:
        raise DocumentError("rule needs a 'then' behaviour", path, rid)
    consequent = behaviour_from_json(obj["then"], f"{path}.then", out_schema, rid)
    return Rule(rid, Antecedent(constraints), consequent)


def rule_to_json(r: Rule) -> dict:
    return {
        "id": r.id,
        "if": [format_constraint(c) for c in r.antecedent],
        "then": behaviour_to_json(r.consequent),
    }


def parse_rule_document(data) -> RuleDocument:
    doc = _load_json(data, "rule document")
    if not isinstance(doc, dict):
        raise DocumentError("rule document must be a JSON object")
    version = doc.get("version")
    if version != VERSION:
        raise DocumentError(f"unsupported version {version!r}", "version")
    unknown = set(doc) - {"version", "schemas", "order", "maneuver_rules", "parameter_rules"}
    if unknown:
        raise DocumentError(f"unexpected keys {sorted(unknown)}")
    schemas = _schemas_from_json(doc.get("schemas"), "schemas")
    order = _order_from_json(doc.get("order"), "order")
    man_schema, par_schema, out_schema = schemas
    ids: set = set()
    man_rules = [
        _rule_from_json(r, f"maneuver_rules[{i}]", man_schema, par_schema, ids)
        for i, r in enumerate(_list(doc.get("maneuver_rules", []), "maneuver_rules"))
    ]
    par_rules = [
        _rule_from_json(r, f"parameter_rules[{i}]", par_schema, out_schema, ids)
        for i, r in enumerate(_list(doc.get("parameter_rules", []), "parameter_rules"))
    ]
    for i, r in enumerate(man_rules):
        if r.consequent.maneuver.feature not in par_schema:
            raise DocumentError(
                f"parameter schema lacks {r.consequent.maneuver.feature}",
                f"maneuver_rules[{i}].then.maneuver", r.id,
            )
    return RuleDocument(man_schema, par_schema, out_schema, order, man_rules, par_rules, version)


def _list(x, path):
    if not isinstance(x, list):
        raise DocumentError("expected a list", path)
    return x


def _schemas_from_json(obj, path):
    if not isinstance(obj, dict):
        raise DocumentError("expected an object with maneuver, parameter and output", path)
    missing = {"maneuver", "parameter", "output"} - set(obj)
    if missing:
        raise DocumentError(f"missing schemas {sorted(missing)}", path)
    return tuple(
        schema_from_json(name, obj[name], f"{path}.{name}")
        for name in ("maneuver", "parameter", "output")
    )


def _order_from_json(obj, path):
    if obj is None:
        return DEFAULT_ORDER
    if not isinstance(obj, list):
        raise DocumentError("order must be a list of maneuvers", path)
    try:
        return ConservativenessOrder(tuple(Maneuver(m) for m in obj))
    except ValueError as exc:
        raise DocumentError(str(exc), path) from None


def schemas_to_json(man, par, out) -> dict:
    return {
        "maneuver": schema_to_json(man),
        "parameter": schema_to_json(par),
        "output": schema_to_json(out),
    }


def rule_document_to_json(doc: RuleDocument | EngineConfig) -> dict:
    if isinstance(doc, EngineConfig):
        doc = RuleDocument.from_config(doc)
    return {
        "version": doc.version,
        "schemas": schemas_to_json(doc.maneuver_schema, doc.parameter_schema, doc.output_schema),
        "order": [m.value for m in doc.order.ordering],
        "maneuver_rules": [rule_to_json(r) for r in doc.maneuver_rules],
        "parameter_rules": [rule_to_json(r) for r in doc.parameter_rules],
    }


def serialize_rule_document(doc: RuleDocument | EngineConfig) -> str:
    return dumps(rule_document_to_json(doc))


def load_config(data) -> EngineConfig:
    doc = parse_rule_document(data)
    try:
        return doc.to_config()
    except SchemaError as exc:
        raise DocumentError(str(exc)) from None


# -- scenes ----------------------------------------------------------------

STRICT = "strict"
COMPLETING = "completing"


def scene_from_json(obj, schema: LayerSchema, mode: str = STRICT, path="") -> Scene:
    if mode not in (STRICT, COMPLETING):
        raise ValueError(f"unknown scene mode {mode!r}")
    if not isinstance(obj, dict):
        raise DocumentError("scene must be an object of feature -> literal", path)
    values = {}
    for name, lit in obj.items():
        fpath = f"{path}.{name}" if path else name
        values[_feature(name, fpath)] = value_from_json(lit, fpath)
    if mode == COMPLETING:
        missing = [f for f in schema.features if f not in values]
        if missing:
            log.warning("completing scene: %s set to undefined", ", ".join(map(str, missing)))
        try:
            return complete_scene(values, schema)
        except InputError as exc:
            raise SceneValidationError([str(exc)]) from None
    return Scene(schema, values)


def scene_to_json(scene: Scene) -> dict:
    return {str(f): value_to_json(v) for f, v in scene.items()}


def parse_scene_document(data, schema: LayerSchema, mode: str = STRICT) -> Scene:
    return scene_from_json(_load_json(data, "scene document"), schema, mode)


def serialize_scene(scene: Scene) -> str:
    return dumps(scene_to_json(scene))


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class Schemas:
    maneuver: LayerSchema
    parameter: LayerSchema
    output: LayerSchema

    @staticmethod
    def of(cfg: EngineConfig) -> Schemas:
        return Schemas(cfg.maneuver_schema, cfg.parameter_schema,
                       cfg.parameter_theory.output_schema)


def _dataset_records(doc):
    if isinstance(doc, list):
        return None, None, doc
    if isinstance(doc, dict):
        unknown = set(doc) - {"version", "schemas", "order", "records"}
        if unknown:
            raise DocumentError(f"unexpected keys {sorted(unknown)}")
        if doc.get("version", VERSION) != VERSION:
            raise DocumentError(f"unsupported version {doc.get('version')!r}", "version")
        schemas = None
        if "schemas" in doc:
            schemas = Schemas(*_schemas_from_json(doc["schemas"], "schemas"))
        order = _order_from_json(doc.get("order"), "order") if "order" in doc else None
        return schemas, order, _list(doc.get("records", []), "records")
    raise DocumentError("dataset must be a list of records or an object with 'records'")


def parse_dataset(data, schemas: Schemas | None = None, mode: str = STRICT):
    """Parse labelled scenes.

    The document is either a bare list of records or an object carrying
    ``schemas`` (and optionally ``order``) next to ``records``. Explicit
    ``schemas`` override the embedded ones. Returns a list of
    :class:`~rulebp.learning.LabelledScene`.
    """
    return parse_dataset_document(data, schemas, mode)[0]


def parse_dataset_document(data, schemas: Schemas | None = None, mode: str = STRICT):
    """Like :func:`parse_dataset` but returns ``(records, schemas, order)``."""
    from .learning import LabelledScene

    doc = _load_json(data, "dataset")
    embedded, order, records = _dataset_records(doc)
    schemas = schemas or embedded
    if schemas is None:
        schemas = infer_schemas(records)
    out = []
    seen: dict = {}
    for i, rec in enumerate(records):
        path = f"records[{i}]"
        if not isinstance(rec, dict):
            raise DocumentError("record must be an object", path)
        missing = {"scene", "maneuver_label", "final_label"} - set(rec)
        if missing:
            raise DocumentError(f"missing keys {sorted(missing)}", path)
        try:
            scene = scene_from_json(rec["scene"], schemas.maneuver, mode, f"{path}.scene")
        except SceneValidationError as exc:
            raise DocumentError(str(exc), f"{path}.scene") from None
        man = behaviour_from_json(rec["maneuver_label"], f"{path}.maneuver_label",
                                  schemas.parameter)
        fin = behaviour_from_json(rec["final_label"], f"{path}.final_label", schemas.output)
        try:
            item = LabelledScene(scene, man, fin)
        except ValueError as exc:
            raise DocumentError(str(exc), path) from None
        if man.maneuver.feature not in schemas.parameter:
            raise DocumentError(
                f"parameter schema lacks {man.maneuver.feature}", f"{path}.maneuver_label"
            )
        prev = seen.get(scene)
        if prev is not None and (out[prev].maneuver_label, out[prev].final_label) != (man, fin):
            raise LabelConflictError(prev, i)
        seen.setdefault(scene, i)
        out.append(item)
    return out, schemas, order


def infer_schemas(records) -> Schemas:
    """Derive permissive schemas (every kind ``any``) from raw dataset records.

    The parameter schema always carries one flag feature per maneuver.
    """
    man, par, out = {}, {}, {}
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise DocumentError("record must be an object", f"records[{i}]")
        for name in rec.get("scene", {}) or {}:
            man.setdefault(name, "any")
        for key, target in (("maneuver_label", par), ("final_label", out)):
            params = (rec.get(key) or {}).get("params", {}) or {}
            for name in params:
                target.setdefault(name, "any")
    for m in Maneuver:
        par.setdefault(str(m.feature), "boolean")
    if not man or not out:
        # an empty schema is invalid; keep a placeholder feature
        man = man or {"Scene.Empty": "any"}
        out = out or {"Output.Empty": "any"}
    return Schemas(
        schema_from_json("maneuver", man, "schemas.maneuver"),
        schema_from_json("parameter", par, "schemas.parameter"),
        schema_from_json("output", out, "schemas.output"),
    )


def record_to_json(ls) -> dict:
    return {
        "scene": scene_to_json(ls.scene),
        "maneuver_label": behaviour_to_json(ls.maneuver_label),
        "final_label": behaviour_to_json(ls.final_label),
    }


def dataset_to_json(dataset, schemas: Schemas | None = None, order=None):
    records = [record_to_json(ls) for ls in dataset]
    if schemas is None:
        return records
    doc = {
        "version": VERSION,
        "schemas": schemas_to_json(schemas.maneuver, schemas.parameter, schemas.output),
    }
    if order is not None:
        doc["order"] = [m.value for m in order.ordering]
    doc["records"] = records
    return doc


def serialize_dataset(dataset, schemas: Schemas | None = None, order=None) -> str:
    return dumps(dataset_to_json(dataset, schemas, order))


# -- traces -------------------------------------------------------------------

def _behaviours_json(bs, order=DEFAULT_ORDER):
    return [behaviour_to_json(b) for b in sorted(bs, key=lambda b: b.sort_key(order))]


def trace_to_json(trace, order=DEFAULT_ORDER) -> dict:
    layers = []
    for lt in trace.layers:
        item = {
            "layer": lt.layer,
            "input": scene_to_json(lt.input),
            "fired": dict(lt.fired),
            "output": _behaviours_json(lt.output, order),
        }
        if isinstance(lt.resolved, Behaviour):
            item["resolved"] = behaviour_to_json(lt.resolved)
        elif lt.resolved is not None:
            item["resolved"] = _behaviours_json(lt.resolved, order)
        if lt.transformed is not None:
            item["transformed"] = scene_to_json(lt.transformed)
        layers.append(item)
    return {"layers": layers}
