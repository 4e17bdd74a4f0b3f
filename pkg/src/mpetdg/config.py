"""YAML run configuration.

Unknown keys are rejected and missing required keys are listed together;
errors carry the line number of the offending entry when it is known.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sympy as sy
import yaml

from .assembly import PenaltyConfig
from .basis import MAX_DEGREE
from .model import (X, T, ManufacturedCase, MpetParameters, NetworkParameters, ParameterError,
                    case_from_expressions, manufactured_case, table1_parameters,
                    table3_parameters, validate_parameters)
from .timestepper import TimeConfig


class ConfigError(ValueError):
    pass


# yaml with line numbers ----------------------------------------------------------


def _construct(node, path, lines, loader):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key "
                                  f"{'.'.join(path + (key,))}")
            out[key] = _construct(v, path + (key,), lines, loader)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, path + (str(i),), lines, loader) for i, v in enumerate(node.value)]
    return loader.construct_object(node, deep=True)


def load_yaml(text: str):
    """Parse YAML, returning ``(data, lines)`` with 1-based lines keyed by key path."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    lines: dict = {}
    if node is None:
        return {}, lines
    loader = yaml.SafeLoader("")
    try:
        return _construct(node, (), lines, loader), lines
    finally:
        loader.dispose()


class _Section:
    """Typed access to one mapping; records which keys were consumed."""

    def __init__(self, data, path, lines, errors):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            errors.append(self._where(lines, path) + f"{'.'.join(path) or 'config'} must be a mapping")
            data = {}
        self.data, self.path, self.lines, self.errors = data, path, lines, errors
        self.used = set()

    @staticmethod
    def _where(lines, path):
        line = lines.get(path)
        return f"line {line}: " if line else ""

    def name(self, key):
        return ".".join(self.path + (key,))

    def get(self, key, default=None, required=False, kind=None):
        self.used.add(key)
        if key not in self.data:
            if required:
                self.errors.append(f"missing key: {self.name(key)}")
            return default
        value = self.data[key]
        if kind is not None and value is not None:
            try:
                if kind is float and isinstance(value, bool):
                    raise TypeError
                value = kind(value)
            except (TypeError, ValueError):
                self.errors.append(self._where(self.lines, self.path + (key,))
                                   + f"{self.name(key)} must be {kind.__name__}, got {value!r}")
                return default
        return value

    def section(self, key, required=False):
        self.used.add(key)
        if key not in self.data and required:
            self.errors.append(f"missing key: {self.name(key)}")
        return _Section(self.data.get(key), self.path + (key,), self.lines, self.errors)

    def finish(self):
        for key in self.data:
            if key not in self.used:
                self.errors.append(self._where(self.lines, self.path + (key,))
                                   + f"unknown key: {self.name(key)}")


# typed configuration -----------------------------------------------------------------


@dataclass
class MeshSpec:
    dim: int
    divisions: int | None = None
    box: tuple | None = None
    file: str | None = None
    agglomerate: int | None = None
    seed: int = 0


@dataclass
class StudySpec:
    mode: str = "h"
    divisions: list = field(default_factory=list)
    pairings: list = field(default_factory=list)  # (q, p)
    degrees: list = field(default_factory=list)
    p_offset: int = 0


@dataclass
class OutputSpec:
    directory: str = "results"
    csv: str = "convergence.csv"
    fields: bool = True
    figure: bool = True
    energy_stride: int = 0
    field_stride: int = 0


@dataclass
class RunConfig:
    test_case: str
    mesh: MeshSpec
    p: int
    q: int
    params: MpetParameters
    time: TimeConfig
    penalty: PenaltyConfig
    study: StudySpec
    output: OutputSpec
    neumann_u: tuple = ()
    neumann_p: tuple | None = None
    exact: dict | None = None
    solver: str = "auto"
    source: str | None = None

    def case(self) -> ManufacturedCase:
        if self.test_case in ("TC1_3D", "TC2_2D"):
            return manufactured_case(self.test_case, self.params)
        u = [sy.sympify(s, locals=_SYMBOLS) for s in self.exact["u"]]
        p = [sy.sympify(s, locals=_SYMBOLS) for s in self.exact["p"]]
        return case_from_expressions("custom", self.params, u, p)


_SYMBOLS = {"x": X[0], "y": X[1], "z": X[2], "t": T}
PRESETS = {"table1": table1_parameters, "table3": table3_parameters}
CASES = ("TC1_3D", "TC2_2D", "custom")
SOLVERS = ("auto", "direct", "iterative")


def _parameters(sec: _Section, dim: int | None) -> MpetParameters | None:
    preset = sec.get("preset", kind=str)
    if preset is not None:
        if preset not in PRESETS:
            sec.errors.append(f"parameters.preset must be one of {sorted(PRESETS)}, got {preset!r}")
            return None
        base = PRESETS[preset]()
        over = {k: sec.get(k, kind=float) for k in ("rho", "lam", "mu") if k in sec.data}
        sec.finish()
        return MpetParameters(base.dim, over.get("rho", base.rho), over.get("lam", base.lam),
                              over.get("mu", base.mu), base.networks, base.beta)
    rho = sec.get("rho", required=True, kind=float)
    lam = sec.get("lam", required=True, kind=float)
    mu = sec.get("mu", required=True, kind=float)
    nets = sec.get("networks", required=True)
    beta = sec.get("beta")
    sec.finish()
    if not isinstance(nets, list) or not nets:
        if nets is not None:
            sec.errors.append("parameters.networks must be a non-empty list")
        return None
    networks = []
    for i, raw in enumerate(nets):
        ns = _Section(raw, sec.path + ("networks", str(i)), sec.lines, sec.errors)
        vals = {k: ns.get(k, required=True, kind=float) for k in ("alpha", "c", "mu")}
        K = ns.get("k", required=True)
        vals["beta_e"] = ns.get("beta_e", 0.0, kind=float)
        ns.finish()
        if any(v is None for v in vals.values()) or K is None:
            continue
        networks.append(NetworkParameters(alpha=vals["alpha"], c=vals["c"],
                                          K=np.asarray(K, dtype=float), mu=vals["mu"],
                                          beta_e=vals["beta_e"]))
    if None in (rho, lam, mu) or len(networks) != len(nets) or dim is None:
        return None
    try:
        beta_arr = None if beta is None else np.asarray(beta, dtype=float)
    except (TypeError, ValueError):
        sec.errors.append("parameters.beta must be a numeric matrix")
        return None
    return MpetParameters(dim=dim, rho=rho, lam=lam, mu=mu, networks=tuple(networks), beta=beta_arr)


def parse_config(source, base_dir: Path | None = None) -> RunConfig:
    """Parse a YAML file path or YAML text into a validated :class:`RunConfig`."""
    text = None
    origin = None
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).suffix in (".yaml", ".yml")):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        origin = str(path)
        base_dir = base_dir or path.parent
    else:
        text = str(source)
    data, lines = load_yaml(text)
    errors: list[str] = []
    root = _Section(data, (), lines, errors)

    test_case = root.get("test_case", required=True, kind=str)
    if test_case is not None and test_case not in CASES:
        errors.append(f"test_case must be one of {CASES}, got {test_case!r}")
    solver = root.get("solver", "auto", kind=str)
    if solver not in SOLVERS:
        errors.append(f"solver must be one of {SOLVERS}, got {solver!r}")

    ms = root.section("mesh", required=True)
    dim = ms.get("dim", required=True, kind=int)
    mesh = MeshSpec(dim=dim or 0, divisions=ms.get("divisions", kind=int),
                    box=ms.get("box"), file=ms.get("file", kind=str),
                    agglomerate=ms.get("agglomerate", kind=int), seed=ms.get("seed", 0, kind=int))
    ms.finish()
    if dim is not None and dim not in (2, 3):
        errors.append(f"mesh.dim must be 2 or 3, got {dim}")
    if mesh.file and base_dir is not None and not Path(mesh.file).is_absolute():
        mesh.file = str(Path(base_dir) / mesh.file)
    if mesh.divisions is not None and mesh.divisions < 1:
        errors.append("mesh.divisions must be >= 1")
    if mesh.agglomerate is not None and mesh.agglomerate < 1:
        errors.append("mesh.agglomerate must be >= 1")

    ds = root.section("degrees")
    p = ds.get("p", 1, kind=int)
    q = ds.get("q", 1, kind=int)
    ds.finish()

    ss = root.section("study")
    study = StudySpec(mode=ss.get("mode", "h", kind=str), divisions=ss.get("divisions", []),
                      pairings=ss.get("pairings", []), degrees=ss.get("degrees", []),
                      p_offset=ss.get("p_offset", 0, kind=int))
    ss.finish()
    if study.mode not in ("h", "p"):
        errors.append(f"study.mode must be 'h' or 'p', got {study.mode!r}")
    if not isinstance(study.divisions, list) or not all(isinstance(v, int) and v >= 1 for v in study.divisions):
        errors.append("study.divisions must be a list of positive integers")
    if not isinstance(study.pairings, list) or not all(
            isinstance(v, list) and len(v) == 2 for v in study.pairings):
        errors.append("study.pairings must be a list of [q, p] pairs")
    else:
        study.pairings = [tuple(int(x) for x in v) for v in study.pairings]
    if not isinstance(study.degrees, list):
        errors.append("study.degrees must be a list")
    degs = [p, q] + [d for pr in study.pairings for d in pr] + list(study.degrees)
    degs += [d + study.p_offset for d in study.degrees]
    for dg in degs:
        if not isinstance(dg, int) or not 1 <= dg <= MAX_DEGREE:
            errors.append(f"polynomial degrees must lie in [1, {MAX_DEGREE}], got {dg!r}")
            break

    ts = root.section("time", required=True)
    tvals = {k: ts.get(k, required=True, kind=float) for k in ("dt", "T")}
    topt = {k: ts.get(k, kind=float) for k in ("beta", "gamma", "theta") if k in ts.data}
    ba = ts.get("ba_sign", -1, kind=int)
    ts.finish()

    ps = root.section("penalty")
    eta0 = ps.get("eta0", 10.0, kind=float)
    z = ps.get("z", 10.0)
    auto = ps.get("auto_rescale", True, kind=bool)
    ps.finish()

    pars = root.section("parameters", required=True)
    params = _parameters(pars, dim)

    bs = root.section("boundary")
    neumann_u = tuple(bs.get("neumann_u", []) or [])
    neumann_p = bs.get("neumann_p")
    bs.finish()

    ex = root.section("exact")
    exact = None
    if ex.data:
        exact = {"u": ex.get("u", required=True), "p": ex.get("p", required=True)}
    ex.finish()
    if test_case == "custom" and exact is None:
        errors.append("missing key: exact (required for test_case custom)")

    os_ = root.section("output")
    output = OutputSpec(directory=os_.get("directory", "results", kind=str),
                        csv=os_.get("csv", "convergence.csv", kind=str),
                        fields=os_.get("fields", True, kind=bool),
                        figure=os_.get("figure", True, kind=bool),
                        energy_stride=os_.get("energy_stride", 0, kind=int),
                        field_stride=os_.get("field_stride", 0, kind=int))
    os_.finish()
    root.finish()

    time_cfg = penalty = None
    if not errors:
        try:
            time_cfg = TimeConfig(dt=tvals["dt"], T=tvals["T"], ba_sign=ba, **topt)
        except ValueError as exc:
            errors.append(f"time: {exc}")
        try:
            penalty = PenaltyConfig(eta0=eta0, z=z, auto_rescale=auto)
        except (TypeError, ValueError) as exc:
            errors.append(f"penalty: {exc}")
    if params is not None and not errors:
        try:
            validate_parameters(params)
        except ParameterError as exc:
            errors.append(f"parameters: {exc}")
        if test_case == "TC1_3D" and (params.dim != 3 or params.n_networks != 4):
            errors.append("TC1_3D needs dim 3 and 4 networks")
        if test_case == "TC2_2D" and (params.dim != 2 or params.n_networks != 2):
            errors.append("TC2_2D needs dim 2 and 2 networks")
        if dim is not None and params.dim != dim:
            errors.append(f"parameter preset is {params.dim}D but mesh.dim is {dim}")
    if errors:
        where = f" in {origin}" if origin else ""
        raise ConfigError(f"invalid configuration{where}:\n  " + "\n  ".join(errors))
    return RunConfig(test_case=test_case, mesh=mesh, p=p, q=q, params=params, time=time_cfg,
                     penalty=penalty, study=study, output=output, neumann_u=neumann_u,
                     neumann_p=tuple(tuple(s) for s in neumann_p) if neumann_p else None,
                     exact=exact, solver=solver, source=origin)
