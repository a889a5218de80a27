"""Scenario configuration: YAML file validated against a JSON schema.

Unknown keys are rejected everywhere. A top-level ``seed`` is mandatory as
soon as any measure uses a generator.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import jsonschema
import numpy as np
import yaml

from .dynamics import CosinePotential, TabulatedPotential, TonelliModel, Torus, ZeroPotential
from .errors import ConfigError
from .measure import DiscreteMeasure, dirac, random_measure, uniform_cloud

EXPERIMENT_KINDS = ["weak-kam", "cut-report", "cost", "propagate", "flow", "invariants"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_times = {"oneOf": [{"type": "string"}, {"type": "array", "items": _pos, "minItems": 1}]}
_names = {"type": "array", "items": {"type": "string"}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


MEASURE = {
    "oneOf": [
        _obj({"atoms": {"type": "array", "items": _num, "minItems": 1, "maxItems": 256},
              "weights": {"type": "array", "items": {"type": "number", "minimum": 0}}},
             ["atoms"]),
        _obj({"generator": {"const": "dirac"}, "x": _num}, ["generator", "x"]),
        _obj({"generator": {"const": "uniform_cloud"},
              "k": {"type": "integer", "minimum": 1, "maximum": 256}}, ["generator", "k"]),
        _obj({"generator": {"const": "random"},
              "k": {"type": "integer", "minimum": 1, "maximum": 256}}, ["generator", "k"]),
    ]
}

FIELD = {
    "oneOf": [
        _obj({"kind": {"const": "weak-kam"}}, ["kind"]),
        _obj({"kind": {"const": "tent"}, "x0": _num, "left": _num, "right": _num}, ["kind"]),
        _obj({"kind": {"const": "quadratic"}, "center": _num, "scale": _num}, ["kind"]),
        _obj({"kind": {"const": "csv"}, "path": {"type": "string"}}, ["kind", "path"]),
    ]
}

OPTIONS = _obj({
    "field": {"type": "string"},
    "measures": _names,
    "points": {"type": "array", "items": _num},
    "source": {"type": "string"},
    "target": {"type": "string"},
    "times": _times,
    "T": _pos,
    "dt": _pos,
    "refine": {"type": "integer", "minimum": 1, "maximum": 5},
    "verify": {"type": "boolean"},
    "random": {"type": "integer", "minimum": 0, "maximum": 256},
    "atoms": {"type": "integer", "minimum": 1, "maximum": 16},
})

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "kamlab scenario",
    **_obj({
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "model": _obj({
            "domain": {"enum": ["torus"]},
            "potential": {"enum": ["zero", "cosine", "tabulated"]},
            "params": _obj({"amplitude": _num,
                            "values": {"type": "array", "items": _num, "minItems": 4}}),
        }, ["potential"]),
        "grid": _obj({"N": {"type": "integer", "minimum": 16, "maximum": 4096},
                      "W": {"type": "integer", "minimum": 0, "maximum": 8}}),
        "weak_kam": _obj({"delta": _pos, "tol": _pos}),
        "times": {"type": "object", "additionalProperties": {"type": "array", "items": _pos,
                                                             "minItems": 1}},
        "fields": {"type": "object", "additionalProperties": FIELD},
        "measures": {"type": "object", "additionalProperties": MEASURE},
        "experiments": {"type": "array", "items": _obj({
            "kind": {"enum": EXPERIMENT_KINDS},
            "name": {"type": "string"},
            "options": OPTIONS,
        }, ["kind"])},
        "output": _obj({"directory": {"type": "string"},
                        "formats": {"type": "array",
                                    "items": {"enum": ["csv", "svg", "png"]}}}),
    }, ["model"]),
}


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/" + "/".join(parts)


def validate(raw) -> None:
    """Raise ConfigError naming the offending path."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping", path="/")
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(raw), key=lambda e: (len(list(e.absolute_path)), _path(e)))
    if errs:
        # oneOf failures hide the useful message one level down
        e = errs[0]
        best = jsonschema.exceptions.best_match([e] + list(e.context or []))
        raise ConfigError(f"{_path(best)}: {best.message}", path=_path(best))
    if "seed" not in raw:
        for name, m in (raw.get("measures") or {}).items():
            if "generator" in m and m["generator"] != "dirac":
                path = f"/measures/{name}/generator"
                raise ConfigError(f"{path}: a seed is required when generators are used",
                                  path=path)
        for k, ex in enumerate(raw.get("experiments") or []):
            if (ex.get("options") or {}).get("random"):
                path = f"/experiments/{k}/options/random"
                raise ConfigError(f"{path}: a seed is required for random measures",
                                  path=path)
    names = set((raw.get("measures") or {}).keys())
    fields = set((raw.get("fields") or {}).keys()) | {"weak-kam"}
    times = set((raw.get("times") or {}).keys())
    for k, ex in enumerate(raw.get("experiments") or []):
        opts = ex.get("options") or {}
        for key in ("source", "target"):
            if key in opts and opts[key] not in names:
                path = f"/experiments/{k}/options/{key}"
                raise ConfigError(f"{path}: unknown measure {opts[key]!r}", path=path)
        for m, ref in enumerate(opts.get("measures", [])):
            if ref not in names:
                path = f"/experiments/{k}/options/measures/{m}"
                raise ConfigError(f"{path}: unknown measure {ref!r}", path=path)
        if "field" in opts and opts["field"] not in fields:
            path = f"/experiments/{k}/options/field"
            raise ConfigError(f"{path}: unknown field {opts['field']!r}", path=path)
        if isinstance(opts.get("times"), str) and opts["times"] not in times:
            path = f"/experiments/{k}/options/times"
            raise ConfigError(f"{path}: unknown time list {opts['times']!r}", path=path)


@dataclass
class ScenarioConfig:
    raw: dict
    seed: int | None = None
    N: int = 512
    W: int = 2
    delta: float = 0.05
    wk_tol: float = 1e-10
    out_dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "svg"])

    @classmethod
    def from_dict(cls, raw: dict, seed_override=None, out_dir=None) -> "ScenarioConfig":
        raw = copy.deepcopy(raw)
        if seed_override is not None:
            raw["seed"] = int(seed_override)
        validate(raw)
        grid = raw.get("grid", {})
        wk = raw.get("weak_kam", {})
        out = raw.get("output", {})
        return cls(raw=raw, seed=raw.get("seed"), N=grid.get("N", 512), W=grid.get("W", 2),
                   delta=wk.get("delta", 0.05), wk_tol=wk.get("tol", 1e-10),
                   out_dir=out_dir or out.get("directory", "out"),
                   formats=list(out.get("formats", ["csv", "svg"])))

    @property
    def experiments(self) -> list:
        return self.raw.get("experiments") or []

    def model(self) -> TonelliModel:
        m = self.raw["model"]
        params = m.get("params", {})
        kind = m["potential"]
        if kind == "zero":
            pot = ZeroPotential()
        elif kind == "cosine":
            pot = CosinePotential(params.get("amplitude", 1.0))
        else:
            if "values" not in params:
                raise ConfigError("/model/params/values: required for a tabulated potential",
                                      path="/model/params/values")
            pot = TabulatedPotential(params["values"])
        return TonelliModel(Torus(), pot)

    def times(self, spec, default) -> list:
        if spec is None:
            return list(default)
        if isinstance(spec, str):
            return list(self.raw["times"][spec])
        return list(spec)

    def measures(self) -> dict:
        """Named measures; generators draw from one stream in declaration order."""
        rng = np.random.default_rng(self.seed)
        out = {}
        for name, m in (self.raw.get("measures") or {}).items():
            gen = m.get("generator")
            if gen is None:
                w = m.get("weights")
                if w is not None and len(w) != len(m["atoms"]):
                    path = f"/measures/{name}/weights"
                    raise ConfigError(f"{path}: length differs from atoms", path=path)
                if w is None:
                    w = np.full(len(m["atoms"]), 1.0 / len(m["atoms"]))
                out[name] = DiscreteMeasure(m["atoms"], w)
            elif gen == "dirac":
                out[name] = dirac(m["x"])
            elif gen == "uniform_cloud":
                out[name] = uniform_cloud(m["k"], rng)
            else:
                out[name] = random_measure(m["k"], rng)
        return out

    def rng(self, stream: int) -> np.random.Generator:
        """Independent generator for experiment number ``stream``."""
        return np.random.default_rng([self.seed or 0, stream])


def load(path, seed_override=None, out_dir=None) -> ScenarioConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"/: not valid YAML ({exc})", path="/") from exc
    if raw is None:
        raw = {}
    return ScenarioConfig.from_dict(raw, seed_override, out_dir)
