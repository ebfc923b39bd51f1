"""Problem descriptions: INI documents parsed into validated, typed objects.

Sections and keys::

    [diffusivity]  name (constant|linear|pme|degen_I|degen_II|degen_III|gl_phase), D, m, lo, hi
    [fluxmap]      kind (linear|reduced), matrix ("a,b;c,d"), network (path to a network file)
    [network]      alpha, beta (rows separated by ';'), rates, w, d
    [boundary]     U_minus, U_plus, C_minus, C_plus (comma separated)
    [grid]         half_width, n_points
    [solver]       shoot_tol, newton_tol, newton_max_iter, init (zero|random), box_pad
    [evolution]    tau_end, record_dt, amplitude, radius, half_width, n_points, fit_from, fit_to, entropy
    [oracle]       example, tolerance

All validation problems are collected before reporting.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SCHEMA = {
    "diffusivity": {"name": str, "D": float, "m": float, "lo": float, "hi": float},
    "fluxmap": {"kind": str, "matrix": "matrix", "network": str},
    "network": {"alpha": "intmatrix", "beta": "intmatrix", "rates": "vector", "w": "vector", "d": "vector"},
    "boundary": {"U_minus": "vector", "U_plus": "vector", "C_minus": "vector", "C_plus": "vector"},
    "grid": {"half_width": float, "n_points": int},
    "solver": {"shoot_tol": float, "newton_tol": float, "newton_max_iter": int, "init": str, "box_pad": float},
    "evolution": {"tau_end": float, "record_dt": float, "amplitude": float, "radius": float,
                  "half_width": float, "n_points": int, "fit_from": float, "fit_to": float, "entropy": str},
    "oracle": {"example": str, "tolerance": float},
}
POSITIVE = {("grid", "half_width"), ("grid", "n_points"), ("solver", "shoot_tol"), ("solver", "newton_tol"),
            ("solver", "newton_max_iter"), ("evolution", "tau_end"), ("evolution", "record_dt"),
            ("evolution", "half_width"), ("evolution", "n_points"), ("oracle", "tolerance"),
            ("diffusivity", "D"), ("evolution", "radius")}
DIFFUSIVITIES = ("constant", "linear", "pme", "degen_I", "degen_II", "degen_III", "gl_phase")


class ValidationError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class Problem:
    sections: dict
    path: Optional[Path] = None
    network_sections: dict = field(default_factory=dict)

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section):
        return section in self.sections


def _finite(x, where, errors):
    if not math.isfinite(x):
        errors.append(f"{where}: value must be finite")
    return x


def _parse_value(kind, raw, where, errors):
    raw = raw.strip()
    try:
        if kind is str:
            return raw
        if kind is int:
            v = float(raw)
            if not v.is_integer():
                raise ValueError
            return int(v)
        if kind is float:
            return _finite(float(raw), where, errors)
        if kind == "vector":
            v = [float(t) for t in raw.replace(";", ",").split(",") if t.strip()]
            for x in v:
                _finite(x, where, errors)
            return np.array(v)
        if kind in ("matrix", "intmatrix"):
            rows = [[float(t) for t in r.split(",") if t.strip()] for r in raw.split(";") if r.strip()]
            if len({len(r) for r in rows}) != 1:
                raise ValueError("ragged matrix")
            M = np.array(rows)
            if not np.all(np.isfinite(M)):
                errors.append(f"{where}: value must be finite")
            if kind == "intmatrix":
                if not np.all(M == np.round(M)):
                    raise ValueError("entries must be integers")
                return M.astype(int)
            return M
    except ValueError as exc:
        errors.append(f"{where}: cannot parse {raw!r} ({exc})" if str(exc) else f"{where}: cannot parse {raw!r}")
    return None


def _read_ini(text, errors, origin):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(origin))
    except configparser.Error as exc:
        errors.append(f"{origin}: {exc}")
        return {}
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _typed(raw_sections, errors, origin=""):
    out = {}
    for sec, items in raw_sections.items():
        if sec not in SCHEMA:
            errors.append(f"{origin}[{sec}]: unknown section")
            continue
        out[sec] = {}
        for key, raw in items.items():
            where = f"{origin}[{sec}] {key}"
            if key not in SCHEMA[sec]:
                errors.append(f"{where}: unknown key")
                continue
            val = _parse_value(SCHEMA[sec][key], raw, where, errors)
            if val is None:
                continue
            if (sec, key) in POSITIVE and not val > 0:
                errors.append(f"{where}: must be positive")
            out[sec][key] = val
    return out


def apply_overrides(raw_sections: dict, overrides, errors) -> dict:
    """Apply ``section.key=value`` overrides to the raw string sections."""
    raw = {s: dict(v) for s, v in raw_sections.items()}
    for ov in overrides or ():
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            errors.append(f"override {ov!r}: expected section.key=value")
            continue
        lhs, val = ov.split("=", 1)
        sec, key = lhs.split(".", 1)
        raw.setdefault(sec.strip(), {})[key.strip()] = val.strip()
    return raw


def parse_problem(path, overrides=(), need=()) -> Problem:
    """Parse and validate a problem file; raises ValidationError listing every problem."""
    errors = []
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError([f"{path}: {exc}"])
    raw = _read_ini(text, errors, path.name)
    raw = apply_overrides(raw, overrides, errors)
    sections = _typed(raw, errors, "")
    prob = Problem(sections, path)

    fm = sections.get("fluxmap", {})
    net_file = fm.get("network")
    if fm.get("kind") == "reduced":
        if net_file is None and "network" not in sections:
            errors.append("[fluxmap] kind=reduced needs network=<file> or a [network] section")
        if net_file is not None:
            npath = (path.parent / net_file)
            try:
                nraw = _read_ini(npath.read_text(encoding="utf-8"), errors, npath.name)
                ntyped = _typed(nraw, errors, f"{npath.name}:")
                if "network" not in ntyped:
                    errors.append(f"{npath.name}: missing [network] section")
                prob.sections.setdefault("network", {}).update(ntyped.get("network", {}))
            except OSError as exc:
                errors.append(f"[fluxmap] network: {exc}")
    elif fm and fm.get("kind") not in ("linear",):
        errors.append(f"[fluxmap] kind: unknown value {fm.get('kind')!r} (linear|reduced)")
    if fm.get("kind") == "linear" and "matrix" not in fm:
        errors.append("[fluxmap] kind=linear needs matrix")

    d = sections.get("diffusivity", {})
    if d and d.get("name") not in DIFFUSIVITIES:
        errors.append(f"[diffusivity] name: unknown {d.get('name')!r}; expected one of {', '.join(DIFFUSIVITIES)}")
    if d and "name" not in d:
        errors.append("[diffusivity] name: missing")
    if d.get("name") == "pme" and "m" in d and d["m"] < 1:
        errors.append("[diffusivity] m: must be >= 1")

    net = sections.get("network", {})
    if net:
        for key in ("alpha", "beta"):
            if key not in net:
                errors.append(f"[network] {key}: missing")
        if "alpha" in net and "beta" in net and net["alpha"].shape != net["beta"].shape:
            errors.append("[network] alpha and beta must have equal shapes")

    b = sections.get("boundary", {})
    if b:
        has_u = "U_minus" in b and "U_plus" in b
        has_c = "C_minus" in b and "C_plus" in b
        if not (has_u or has_c):
            errors.append("[boundary]: need U_minus and U_plus (or C_minus and C_plus)")
        for a, c in (("U_minus", "U_plus"), ("C_minus", "C_plus")):
            if a in b and c in b and b[a].shape != b[c].shape:
                errors.append(f"[boundary] {a}/{c}: dimension mismatch")

    g = sections.get("grid", {})
    if "n_points" in g and g["n_points"] > 0 and g["n_points"] % 2 == 0:
        errors.append("[grid] n_points: must be odd")
    ev = sections.get("evolution", {})
    if "n_points" in ev and ev["n_points"] > 0 and ev["n_points"] % 2 == 0:
        errors.append("[evolution] n_points: must be odd")
    ent = ev.get("entropy")
    if ent is not None and ent not in ("CA", "phi_m", "E2") and not ent.startswith("E"):
        errors.append(f"[evolution] entropy: unknown {ent!r} (CA|phi_m|E<p>)")

    for sec in need:
        if isinstance(sec, tuple):
            if not any(s in sections for s in sec):
                errors.append(f"missing section: one of {', '.join('[' + s + ']' for s in sec)}")
        elif sec not in sections:
            errors.append(f"missing section [{sec}]")
    if errors:
        raise ValidationError(errors)
    return prob


# ---------------------------------------------------------------- builders

def build_grid(prob: Problem, section="grid"):
    s = prob.sections.get(section, {})
    if "half_width" in s or "n_points" in s:
        return s.get("half_width"), s.get("n_points")
    return None, None


def make_grid(prob: Problem, default_width: float, section="grid", default_n=2001):
    from .core import Grid
    L, n = build_grid(prob, section)
    return Grid(float(L if L is not None else default_width), int(n if n is not None else default_n))


def build_diffusivity(prob: Problem, boundary):
    from .scalar_profile import preset_diffusivity
    d = prob.sections["diffusivity"]
    name = d["name"]
    params = {k: d[k] for k in ("D", "m") if k in d}
    lo = d.get("lo", float(min(boundary.U_minus[0], boundary.U_plus[0])))
    hi = d.get("hi", float(max(boundary.U_minus[0], boundary.U_plus[0])))
    if name in ("degen_I", "degen_II", "degen_III"):
        return preset_diffusivity(name)
    return preset_diffusivity(name, lo, hi, **params)


def build_network(prob: Problem):
    from .reduction import ReactionNetwork
    n = prob.sections["network"]
    return ReactionNetwork(n["alpha"], n["beta"], n.get("rates"), n.get("w"))


def build_flux_map(prob: Problem):
    """VectorFluxMap from [fluxmap] (linear matrix) or a reduced network; returns (A, extra)."""
    from .core import linear_flux_map
    from .reduction import make_reduction, reduced_flux_map
    fm = prob.sections.get("fluxmap", {})
    if fm.get("kind") == "linear":
        return linear_flux_map(fm["matrix"]), {"matrix": fm["matrix"]}
    net = build_network(prob)
    d = prob.get("network", "d")
    if d is None:
        raise ValueError("[network] d: diffusion coefficients are required for a reduced flux map")
    red = make_reduction(net)
    return reduced_flux_map(net, d, red), {"network": net, "reduction": red, "d": d}


def build_boundary(prob: Problem, Q=None):
    from .core import BoundaryPair
    b = prob.sections["boundary"]
    if "U_minus" in b:
        return BoundaryPair(b["U_minus"], b["U_plus"])
    if Q is None:
        raise ValueError("[boundary] C_minus/C_plus need a network to form U = Q C")
    return BoundaryPair(Q @ b["C_minus"], Q @ b["C_plus"])
