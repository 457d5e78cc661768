"""Strict JSON experiment configuration.

Layout::

    {
      "market":   {"example": "2.1", "params": {...}},
      "utility":  {"kind": "log", "params": {}, "domain": ["0", "inf"]},
      "sim":      {"n_paths": 10000, "n_steps": 256, "seed": 1, "antithetic": false},
      "output":   {"dir": "out"},
      "x0": 1.0,
      "strategy": "maximin"
    }

Unknown keys anywhere are errors.  ``strategy`` is one of ``"maximin"``,
``"trivial"``, ``"myopic"`` or ``{"kind": "point", "point": <index>}``.
"""

from __future__ import annotations

import inspect
import json
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

from . import market_model as mm
from .errors import MaximinError, ParseError
from .market_model import ParamClass
from .simulator import SimConfig
from .utility_dual import (
    DomainInterval,
    LogUtility,
    PowerUtility,
    QuadraticUtility,
    TabulatedUtility,
    UtilityFamily,
)

MARKETS = {
    "2.1": mm.build_example_2_1,
    "3.1": mm.build_example_3_1,
    "4.1": mm.build_example_4_1,
    "4.2": mm.build_example_4_2,
    "4.3": mm.build_example_4_3,
    "single_stock": mm.single_stock,
    "custom": mm.build_custom,
}

UTILITIES = {
    "log": LogUtility,
    "power": PowerUtility,
    "quadratic": QuadraticUtility,
    "tabulated": TabulatedUtility,
}

TOP_KEYS = {"market", "utility", "sim", "output", "x0", "strategy"}
SIM_KEYS = {f.name for f in fields(SimConfig)} - {"record_paths"}


@dataclass
class Experiment:
    market_name: str
    cls: ParamClass
    utility: UtilityFamily
    sim: SimConfig
    out_dir: Path
    x0: float
    strategy: dict


class _Locator:
    """Maps a key name back to the first line that mentions it."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, key):
        pat = re.compile(r'"' + re.escape(str(key)) + r'"\s*:')
        for i, ln in enumerate(self.lines, 1):
            if pat.search(ln):
                return i
        return None


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _parse_bound(v, loc, fieldname):
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf"):
            return math.inf
        if s == "-inf":
            return -math.inf
        try:
            return float(s)
        except ValueError:
            pass
    elif isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    raise ParseError(f"bad domain bound {v!r}", line=loc.line_of("domain"), field=fieldname)


def _check_keys(d, allowed, loc, where):
    if not isinstance(d, dict):
        raise ParseError(f"{where} must be an object", line=loc.line_of(where), field=where)
    for k in d:
        if k not in allowed:
            raise ParseError(f"unknown key {k!r} in {where}", line=loc.line_of(k), field=k)


def _call_builder(fn, params, loc, where):
    sig = inspect.signature(fn)
    _check_keys(params, set(sig.parameters), loc, where)
    missing = [n for n, p in sig.parameters.items()
               if p.default is inspect.Parameter.empty and n not in params]
    if missing:
        raise ParseError(f"missing parameters {missing} in {where}", line=loc.line_of(where),
                         field=missing[0])
    try:
        return fn(**params)
    except (MaximinError, ValueError, TypeError) as exc:
        raise ParseError(str(exc), line=loc.line_of(where), field=where) from exc


def _market(section, loc):
    _check_keys(section, {"example", "params"}, loc, "market")
    name = str(section.get("example", ""))
    if name not in MARKETS:
        raise ParseError(f"unknown market example {name!r}; choose from {sorted(MARKETS)}",
                         line=loc.line_of("example"), field="example")
    params = dict(section.get("params", {}))
    if name == "4.1" and "sigma_scale" in params:
        scale = float(params.pop("sigma_scale"))
        params["sigma_bond"] = lambda t, Tk, _s=scale: _s * (Tk - t)
    return name, _call_builder(MARKETS[name], params, loc, "params")


def _utility(section, loc):
    _check_keys(section, {"kind", "params", "domain"}, loc, "utility")
    kind = section.get("kind")
    if kind not in UTILITIES:
        raise ParseError(f"unknown utility kind {kind!r}", line=loc.line_of("kind"), field="kind")
    cls = UTILITIES[kind]
    params = dict(section.get("params", {}))
    allowed = {f.name for f in fields(cls)} - {"domain"}
    _check_keys(params, allowed, loc, "params")
    for key in ("xs", "us"):
        if key in params:
            params[key] = tuple(float(v) for v in params[key])
    if "domain" in section:
        dom = section["domain"]
        if not isinstance(dom, list) or len(dom) != 2:
            raise ParseError("domain must be a two-element list", line=loc.line_of("domain"),
                             field="domain")
        try:
            params["domain"] = DomainInterval(_parse_bound(dom[0], loc, "domain"),
                                              _parse_bound(dom[1], loc, "domain"))
        except MaximinError as exc:
            raise ParseError(str(exc), line=loc.line_of("domain"), field="domain") from exc
    try:
        return cls(**params)
    except (MaximinError, ValueError, TypeError) as exc:
        bad = next((k for k in params if k in str(exc)), "params")
        raise ParseError(str(exc), line=loc.line_of(bad if bad != "params" else "utility"),
                         field=bad) from exc


def _strategy(v, loc):
    if v is None:
        return {"kind": "maximin"}
    if isinstance(v, str):
        if v not in ("maximin", "trivial", "myopic"):
            raise ParseError(f"unknown strategy {v!r}", line=loc.line_of("strategy"),
                             field="strategy")
        return {"kind": v}
    _check_keys(v, {"kind", "point"}, loc, "strategy")
    if v.get("kind") != "point" or not isinstance(v.get("point"), int):
        raise ParseError("strategy object must be {\"kind\": \"point\", \"point\": <int>}",
                         line=loc.line_of("strategy"), field="strategy")
    return {"kind": "point", "point": int(v["point"])}


def parse_config_text(text: str, base_dir: Path | None = None) -> Experiment:
    loc = _Locator(text)
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    except ValueError as exc:
        key = str(exc).split("'")[1] if "'" in str(exc) else None
        raise ParseError(str(exc), line=loc.line_of(key) if key else None, field=key) from exc
    _check_keys(raw, TOP_KEYS, loc, "config")
    for req in ("market", "utility"):
        if req not in raw:
            raise ParseError(f"missing section {req!r}", field=req)

    name, cls = _market(raw["market"], loc)
    u = _utility(raw["utility"], loc)

    sim = raw.get("sim", {})
    _check_keys(sim, SIM_KEYS, loc, "sim")
    try:
        cfg = SimConfig(**sim)
    except (ValueError, TypeError) as exc:
        raise ParseError(str(exc), line=loc.line_of("sim"), field="sim") from exc

    out = raw.get("output", {})
    _check_keys(out, {"dir"}, loc, "output")
    out_dir = Path(out.get("dir", "out"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    x0 = raw.get("x0", 1.0)
    if isinstance(x0, bool) or not isinstance(x0, (int, float)):
        raise ParseError("x0 must be a number", line=loc.line_of("x0"), field="x0")
    x0 = float(x0)
    if not u.domain.interior(x0):
        raise ParseError(f"x0={x0} is not strictly inside the domain "
                         f"[{u.domain.lower}, {u.domain.upper}]", line=loc.line_of("x0"), field="x0")
    strat = _strategy(raw.get("strategy"), loc)
    if strat["kind"] == "point" and not 0 <= strat["point"] < len(cls.points):
        raise ParseError(f"point index {strat['point']} outside the class",
                         line=loc.line_of("point"), field="point")
    return Experiment(name, cls, u, cfg, out_dir, x0, strat)


def parse_config(path) -> Experiment:
    """Read and validate an experiment file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    return parse_config_text(text)
