"""Scenario configuration for the qnk command line.

The format is flat and line-oriented: ``[name]`` opens a scenario section
and every following ``key = value`` line belongs to it until the next
header.  Blank lines and lines starting with ``#`` or ``;`` are ignored.
Keys are dotted lowercase paths (``profile.kind``, ``grid.nx``,
``assert.neutrality_max``); values are booleans (``true``/``false``),
numbers, comma-separated tuples of numbers, or bare strings.  Parsing is
strict: unknown keys, duplicate keys, and missing required keys are
reported with their full ``[section] key`` path.  Tabulated profiles
load from a two-column CSV ``v,mu`` (header row included); tabulated
boundary sides from a two-column CSV ``s,f``.

Potential wells are given as a formula string over a deliberately small
grammar: a sum of signed terms, each one a constant, a monomial
``c*x^k``, or ``c*sin^2(k*pi*x)``; the resulting well must be
nonpositive with pinned endpoints (checked on construction).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from qnk.bgk import BoundaryData, PotentialWell
from qnk.errors import ConfigError, QnkError
from qnk.profiles import ProfileSpec
from qnk.solver import PhaseGrid, rescaling_maps

__all__ = ["Scenario", "validate_config", "parse_well_formula", "write_echo"]

SCENARIO_KINDS = (
    "penrose_check", "instability", "stable_well_prepared",
    "stable_ill_prepared", "bgk_build", "ion_variant",
)

_PROFILE_PARAMS = {
    "maxwellian": {"T", "u"},
    "two_stream": {"T", "u", "weights"},
    "bump_on_tail": {"T", "amp", "center", "width"},
    "compact_bump": {"a", "b"},
    "tabulated": {"csv"},
}

_SIDE_PARAMS = {
    "vacuum": set(),
    "half_maxwellian": {"T", "weight", "center"},
    "poly_maxwellian": {"T", "weight", "coeffs"},
    "power_law": {"expo", "scale", "cut", "weight"},
    "tabulated": {"csv"},
}

_ASSERT_KEYS = {
    "penrose_check": {"stable"},
    "instability": {"rate_rel_tol", "r2_min"},
    "stable_well_prepared": {"lyapunov_max"},
    "stable_ill_prepared": {"lo_eps_max", "osc_residual_max"},
    "bgk_build": {"neutrality_max"},
    "ion_variant": {"neutrality_max"},
}

# keys every scenario kind accepts
_COMMON_KEYS = {"kind", "seed"}

# per-kind key schema: required and optional (beyond profile./boundary./assert.)
_SCHEMA = {
    "penrose_check": dict(
        required={"profile.kind"},
        optional={"alpha", "M", "n_max"},
    ),
    "instability": dict(
        required={"profile.kind", "M", "eps", "delta", "grid.nx", "grid.nv",
                  "grid.vmax", "t_final", "dt"},
        optional={"n_max", "stride", "truncate"},
    ),
    "stable_well_prepared": dict(
        required={"profile.kind", "eps", "delta", "grid.nx", "grid.nv",
                  "grid.vmax", "t_final", "dt"},
        optional={"grid.lx", "pert_mode", "q_smax", "stride"},
    ),
    "stable_ill_prepared": dict(
        required={"profile.kind", "eps", "grid.nx", "grid.nv", "grid.vmax",
                  "t_final", "dt", "v0.amp", "v0.mode"},
        optional={"grid.lx", "vbar", "q_smax", "stride"},
    ),
    "bgk_build": dict(
        required={"well", "grid.nx", "grid.nv", "grid.vmax"},
        optional={"boundary.normalize"},
    ),
    "ion_variant": dict(
        required={"well", "alpha", "grid.nx", "grid.nv", "grid.vmax"},
        optional={"boundary.normalize"},
    ),
}

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")
_KEY_RE = re.compile(r"^[a-zA-Z][a-zA-Z0-9_]*(\.[a-zA-Z][a-zA-Z0-9_]*)*$")


@dataclass(frozen=True)
class Scenario:
    """One fully-resolved experiment: references already instantiated."""

    name: str
    kind: str
    profile: ProfileSpec = None
    boundary: BoundaryData = None
    well: PotentialWell = None
    grid: PhaseGrid = None
    eps: float = None
    alpha: float = None
    M: float = None
    delta: float = None
    v0_amp: float = None
    v0_mode: int = None
    vbar: float = 0.0
    n_max: int = None
    truncate: bool = False
    pert_mode: int = 1
    q_smax: float = None
    t_final: float = None
    dt: float = None
    stride: int = None
    seed: int = 0
    assertions: Mapping = field(default_factory=dict)
    resolved: Mapping = field(default_factory=dict)


def _coerce(text: str):
    s = text.strip()
    if "," in s:
        return tuple(_coerce(part) for part in s.split(","))
    low = s.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def _uncoerce(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_uncoerce(v) for v in value)
    return str(value)


def _parse_sections(path: Path) -> list:
    """[(name, lineno, {key: value})] in file order, with duplicate checks."""
    sections = []
    current = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not _NAME_RE.match(name):
                raise ConfigError(
                    f"{path}:{lineno}: scenario name {name!r} must match "
                    "[A-Za-z0-9][A-Za-z0-9_.-]*")
            if any(name == n for n, _, _ in sections):
                raise ConfigError(f"{path}:{lineno}: duplicate scenario "
                                  f"name [{name}]")
            current = {}
            sections.append((name, lineno, current))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                              f"got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key {key!r} appears before "
                              "any [scenario] header")
        if not _KEY_RE.match(key):
            raise ConfigError(f"{path}:{lineno}: malformed key {key!r}")
        if key in current:
            name = sections[-1][0]
            raise ConfigError(f"{path}:{lineno}: duplicate key "
                              f"[{name}] {key}")
        current[key] = _coerce(value)
    if not sections:
        raise ConfigError(f"{path}: no scenario sections found")
    return sections


_NUM_RE = r"(?:[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)"
_CONST_RE = re.compile(rf"^{_NUM_RE}$")
_MONO_RE = re.compile(rf"^(?:(?P<coef>{_NUM_RE})\*)?x(?:\^(?P<pow>[0-9]+))?$")
_SIN_RE = re.compile(
    rf"^(?:(?P<coef>{_NUM_RE})\*)?sin\^2\((?:(?P<k>[0-9]+)\*)?pi\*x\)$")


def parse_well_formula(text: str) -> PotentialWell:
    """Build a :class:`PotentialWell` from a formula in the small grammar.

    Accepted terms (summed with +/-): constants, monomials ``c*x^k``
    (``x`` alone means ``x^1``), and ``c*sin^2(k*pi*x)``.  Anything else
    is a :class:`ConfigError`; an admissibility failure of the resulting
    well (positive values, unpinned endpoints) is reported the same way.
    """
    compact = re.sub(r"\s+", "", str(text))
    if not compact:
        raise ConfigError("well formula is empty")
    chunks = [c for c in re.split(r"(?<![eE*(^])(?=[+-])", compact) if c]
    terms = []  # (sign, kind, coef, k)
    for chunk in chunks:
        sign = 1.0
        body = chunk
        if body[0] in "+-":
            sign = -1.0 if body[0] == "-" else 1.0
            body = body[1:]
        if not body:
            raise ConfigError(f"well formula: dangling sign in {chunk!r}")
        if _CONST_RE.match(body):
            terms.append((sign * float(body), "const", 0))
            continue
        m = _MONO_RE.match(body)
        if m:
            coef = float(m.group("coef")) if m.group("coef") else 1.0
            power = int(m.group("pow")) if m.group("pow") else 1
            terms.append((sign * coef, "mono", power))
            continue
        m = _SIN_RE.match(body)
        if m:
            coef = float(m.group("coef")) if m.group("coef") else 1.0
            k = int(m.group("k")) if m.group("k") else 1
            if k < 1:
                raise ConfigError(
                    f"well formula: sin^2 frequency must be >= 1 in {chunk!r}")
            terms.append((sign * coef, "sin2", k))
            continue
        raise ConfigError(
            f"well formula: cannot parse term {chunk!r}; the grammar allows "
            "constants, c*x^k, and c*sin^2(k*pi*x)")

    def V(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for coef, kind, k in terms:
            if kind == "const":
                out += coef
            elif kind == "mono":
                out += coef * x ** k
            else:
                out += coef * np.sin(k * math.pi * x) ** 2
        return out

    try:
        return PotentialWell.from_function(V)
    except QnkError as exc:
        raise ConfigError(f"well formula {text!r}: {exc}") from exc


def _take(raw: dict, key: str, default=None):
    return raw.pop(key, default)


def _expect_number(name, key, value, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{name}] {key}: expected a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(f"[{name}] {key}: expected an integer, got {value!r}")
    return value


def _build_profile(name: str, raw: dict, base: Path) -> ProfileSpec:
    kind = _take(raw, "profile.kind")
    if not isinstance(kind, str) or kind not in _PROFILE_PARAMS:
        raise ConfigError(f"[{name}] profile.kind: unknown profile kind "
                          f"{kind!r}; choose from "
                          f"{sorted(_PROFILE_PARAMS)}")
    allowed = _PROFILE_PARAMS[kind]
    params = {}
    for key in [k for k in raw if k.startswith("profile.")]:
        param = key.split(".", 1)[1]
        if param not in allowed:
            raise ConfigError(f"[{name}] {key}: unknown parameter for "
                              f"profile kind {kind!r}")
        params[param] = raw.pop(key)
    try:
        if kind == "tabulated":
            csv_path = params.pop("csv", None)
            if not isinstance(csv_path, str):
                raise ConfigError(f"[{name}] profile.csv: tabulated profiles "
                                  "need a csv path")
            return ProfileSpec.tabulated_from_csv(base / csv_path)
        return ProfileSpec(kind, **params)
    except ConfigError:
        raise
    except (QnkError, OSError) as exc:
        raise ConfigError(f"[{name}] profile: {exc}") from exc


def _build_boundary(name: str, raw: dict, base: Path) -> tuple:
    sides = {}
    for side in ("plus", "minus"):
        prefix = f"boundary.{side}."
        keys = [k for k in raw if k.startswith(prefix)]
        if not keys:
            continue
        kind = _take(raw, prefix + "kind")
        if not isinstance(kind, str) or kind not in _SIDE_PARAMS:
            raise ConfigError(f"[{name}] {prefix}kind: unknown boundary side "
                              f"kind {kind!r}; choose from "
                              f"{sorted(_SIDE_PARAMS)}")
        allowed = _SIDE_PARAMS[kind]
        spec = {"kind": kind}
        for key in [k for k in raw if k.startswith(prefix)]:
            param = key.split(".", 2)[2]
            if param not in allowed:
                raise ConfigError(f"[{name}] {key}: unknown parameter for "
                                  f"side kind {kind!r}")
            spec[param] = raw.pop(key)
        if kind == "tabulated":
            csv_path = spec.pop("csv", None)
            if not isinstance(csv_path, str):
                raise ConfigError(f"[{name}] {prefix}csv: tabulated sides "
                                  "need a csv path")
            try:
                table = np.loadtxt(base / csv_path, delimiter=",", skiprows=1)
                spec["s"], spec["f"] = table[:, 0], table[:, 1]
            except (OSError, ValueError, IndexError) as exc:
                raise ConfigError(f"[{name}] {prefix}csv: {exc}") from exc
        sides[side] = spec
    if not sides:
        raise ConfigError(f"[{name}]: bgk scenarios need at least one "
                          "boundary.plus.* or boundary.minus.* block")
    normalize = _take(raw, "boundary.normalize", False)
    if not isinstance(normalize, bool):
        raise ConfigError(f"[{name}] boundary.normalize: expected "
                          "true/false")
    try:
        return BoundaryData(plus=sides.get("plus"), minus=sides.get("minus"),
                            normalize=normalize), normalize
    except QnkError as exc:
        raise ConfigError(f"[{name}] boundary: {exc}") from exc


def _build_grid(name: str, raw: dict, *, lx: float, allow_lx: bool) -> PhaseGrid:
    if allow_lx:
        lx = _expect_number(name, "grid.lx", _take(raw, "grid.lx", lx))
    elif "grid.lx" in raw:
        raise ConfigError(f"[{name}] grid.lx: not configurable for this "
                          "scenario kind")
    nx = _expect_number(name, "grid.nx", _take(raw, "grid.nx"), integer=True)
    nv = _expect_number(name, "grid.nv", _take(raw, "grid.nv"), integer=True)
    vmax = _expect_number(name, "grid.vmax", _take(raw, "grid.vmax"))
    try:
        return PhaseGrid(Lx=float(lx), Nx=nx, vmax=float(vmax), Nv=nv)
    except QnkError as exc:
        raise ConfigError(f"[{name}] grid: {exc}") from exc


def _collect_asserts(name: str, kind: str, raw: dict) -> dict:
    allowed = _ASSERT_KEYS[kind]
    out = {}
    for key in [k for k in raw if k.startswith("assert.")]:
        aname = key.split(".", 1)[1]
        if aname not in allowed:
            raise ConfigError(f"[{name}] {key}: scenario kind {kind!r} "
                              f"supports assertions {sorted(allowed)}")
        out[aname] = raw.pop(key)
    return out


def _validate_scenario(name: str, raw: dict, base: Path) -> Scenario:
    raw = dict(raw)
    original = dict(raw)
    kind = _take(raw, "kind")
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"[{name}] kind: unknown scenario kind {kind!r}; "
                          f"choose from {list(SCENARIO_KINDS)}")
    schema = _SCHEMA[kind]
    missing = [k for k in schema["required"] if k not in raw]
    if missing:
        raise ConfigError(f"[{name}]: missing required keys for {kind}: "
                          f"{sorted(missing)}")

    seed = _expect_number(name, "seed", _take(raw, "seed", 0), integer=True)
    assertions = _collect_asserts(name, kind, raw)
    fields = dict(name=name, kind=kind, seed=seed, assertions=assertions)

    if kind in ("penrose_check", "instability", "stable_well_prepared",
                "stable_ill_prepared"):
        fields["profile"] = _build_profile(name, raw, base)

    if kind == "penrose_check":
        alpha = _expect_number(name, "alpha", _take(raw, "alpha", 0.0))
        if alpha < 0:
            raise ConfigError(f"[{name}] alpha: must be nonnegative")
        fields["alpha"] = float(alpha)
        if "M" in raw:
            fields["M"] = float(_expect_number(name, "M", _take(raw, "M")))
        if "n_max" in raw:
            fields["n_max"] = _expect_number(name, "n_max",
                                             _take(raw, "n_max"), integer=True)

    elif kind == "instability":
        M = float(_expect_number(name, "M", _take(raw, "M")))
        eps = float(_expect_number(name, "eps", _take(raw, "eps")))
        try:
            rescaling_maps(eps, M)
        except QnkError as exc:
            raise ConfigError(f"[{name}] eps: {exc}") from exc
        fields["M"], fields["eps"] = M, eps
        fields["delta"] = float(_expect_number(name, "delta",
                                               _take(raw, "delta")))
        fields["grid"] = _build_grid(name, raw, lx=M, allow_lx=False)
        if "n_max" in raw:
            fields["n_max"] = _expect_number(name, "n_max",
                                             _take(raw, "n_max"), integer=True)
        truncate = _take(raw, "truncate", False)
        if not isinstance(truncate, bool):
            raise ConfigError(f"[{name}] truncate: expected true/false")
        fields["truncate"] = truncate
        fields["t_final"] = float(_expect_number(name, "t_final",
                                                 _take(raw, "t_final")))
        fields["dt"] = float(_expect_number(name, "dt", _take(raw, "dt")))
        fields["stride"] = _expect_number(name, "stride",
                                          _take(raw, "stride", 1),
                                          integer=True)

    elif kind in ("stable_well_prepared", "stable_ill_prepared"):
        eps = float(_expect_number(name, "eps", _take(raw, "eps")))
        if eps <= 0:
            raise ConfigError(f"[{name}] eps: must be positive")
        fields["eps"] = eps
        fields["grid"] = _build_grid(name, raw, lx=1.0, allow_lx=True)
        fields["t_final"] = float(_expect_number(name, "t_final",
                                                 _take(raw, "t_final")))
        dt = float(_expect_number(name, "dt", _take(raw, "dt")))
        fields["dt"] = dt
        # default output stride for stable runs: every 1/(16 dt) steps
        default_stride = max(1, round(1.0 / (16.0 * dt)))
        fields["stride"] = _expect_number(name, "stride",
                                          _take(raw, "stride", default_stride),
                                          integer=True)
        if "q_smax" in raw:
            fields["q_smax"] = float(_expect_number(name, "q_smax",
                                                    _take(raw, "q_smax")))
        if kind == "stable_well_prepared":
            fields["delta"] = float(_expect_number(name, "delta",
                                                   _take(raw, "delta")))
            fields["pert_mode"] = _expect_number(name, "pert_mode",
                                                 _take(raw, "pert_mode", 1),
                                                 integer=True)
        else:
            fields["v0_amp"] = float(_expect_number(name, "v0.amp",
                                                    _take(raw, "v0.amp")))
            fields["v0_mode"] = _expect_number(name, "v0.mode",
                                               _take(raw, "v0.mode"),
                                               integer=True)
            fields["vbar"] = float(_expect_number(name, "vbar",
                                                  _take(raw, "vbar", 0.0)))

    else:  # bgk_build / ion_variant
        fields["boundary"], normalize = _build_boundary(name, raw, base)
        original.setdefault("boundary.normalize", normalize)
        well_text = _take(raw, "well")
        if not isinstance(well_text, str):
            raise ConfigError(f"[{name}] well: expected a formula string")
        try:
            fields["well"] = parse_well_formula(well_text)
        except ConfigError as exc:
            raise ConfigError(f"[{name}] well: {exc}") from exc
        fields["grid"] = _build_grid(name, raw, lx=1.0, allow_lx=False)
        if kind == "ion_variant":
            alpha = float(_expect_number(name, "alpha", _take(raw, "alpha")))
            if alpha <= 0:
                raise ConfigError(f"[{name}] alpha: must be positive")
            fields["alpha"] = alpha

    if raw:
        key = sorted(raw)[0]
        raise ConfigError(f"[{name}] {key}: unknown key for scenario kind "
                          f"{kind!r}")

    # fully-resolved flat view (defaults made explicit) for the echo
    resolved = dict(original)
    resolved["kind"] = kind
    resolved["seed"] = seed
    for key, attr in (("stride", "stride"), ("t_final", "t_final"),
                      ("dt", "dt"), ("vbar", "vbar"),
                      ("truncate", "truncate"), ("alpha", "alpha"),
                      ("pert_mode", "pert_mode")):
        value = fields.get(attr)
        if value is not None and key not in resolved:
            if not (key == "vbar" and kind != "stable_ill_prepared") and \
               not (key == "truncate" and kind != "instability") and \
               not (key == "pert_mode" and kind != "stable_well_prepared"):
                resolved[key] = value
    if fields.get("grid") is not None and "grid.lx" not in resolved \
            and kind in ("stable_well_prepared", "stable_ill_prepared"):
        resolved["grid.lx"] = fields["grid"].Lx
    fields["resolved"] = resolved
    return Scenario(**fields)


def validate_config(path, echo_dir=None) -> list:
    """Parse, validate, and resolve every scenario in a config file.

    Returns the scenarios in file order.  When ``echo_dir`` is given, the
    fully-resolved configuration (defaults filled in) is written there as
    ``config.echo`` for reproducibility.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    sections = _parse_sections(path)
    scenarios = [_validate_scenario(name, raw, path.parent)
                 for name, _, raw in sections]
    if echo_dir is not None:
        echo_dir = Path(echo_dir)
        echo_dir.mkdir(parents=True, exist_ok=True)
        write_echo(scenarios, echo_dir / "config.echo")
    return scenarios


def write_echo(scenarios, path) -> None:
    """Write the resolved key=value view of every scenario, kind first,
    remaining keys sorted, so reruns of one config are byte-identical."""
    lines = []
    for s in scenarios:
        lines.append(f"[{s.name}]")
        keys = sorted(k for k in s.resolved if k != "kind")
        for key in ["kind"] + keys:
            lines.append(f"{key} = {_uncoerce(s.resolved[key])}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
