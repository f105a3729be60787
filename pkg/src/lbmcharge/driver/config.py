"""Scenario files: sectioned ``key = value`` text read with :mod:`configparser`.

Grammar (``#`` and ``;`` start comments, vectors are whitespace separated)::

    [scenario]      name, steps, seed
    [domain]        cells = nx ny nz, blocks = bx by bz (cells per block),
                    periodic = yes no no, dx = <m> (optional)
    [fluid]         tau, magic = mid | por | <number>, density, viscosity,
                    acceleration = ax ay az
    [lbm:<name>]    face = x-|x+|y-|y+|z-|z+, kind = noslip|velocity|pressure|freeslip,
                    velocity = ux uy uz, density, lo = a b, hi = a b
    [beam:<name>]   lo = i j k, hi = i j k, kind = noslip|velocity, velocity
    [potential]     relative_permittivity, reference (V), subsampling_rhs,
                    subsampling_force
    [potential:<name>] face, kind = dirichlet|neumann, value, lo, hi
    [multigrid]     pre, post, correction, tolerance, max_cycles, max_levels,
                    coarse_mode = relative|fixed, coarse_tolerance, coarse_iterations
    [particles:<name>] radius, density, charge (elementary charges), origin,
                    count = nx ny nz, spacing, velocity
    [insertion]     radius, density, charge, signs = random|positive|negative,
                    solid_fraction, speed, face, lo, hi (insertion window in cells)
    [lubrication]   enabled, cutoff, min_gap, max_separation_velocity
    [contacts]      restitution, max_displacement
    [output]        metrics_every, snapshot_every, trajectory_every

When ``[domain] dx`` is given, lengths, velocities, densities and potentials
are SI and converted with the time step that maps ``viscosity`` onto
``tau``. Otherwise every value is already in lattice units. Cell ranges
(``lo``/``hi``) are always cell indices; lubrication values are always
lattice units.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..boundaries import BoundaryCondition, Obstacle, Patch
from ..electrostatics import PotentialPatch
from ..errors import ConfigurationError
from ..lbm import TrtParams
from ..lubrication import LubricationConfig
from ..multigrid import MgConfig
from ..particles import SphereParticle
from .units import ELEMENTARY_CHARGE, VACUUM_PERMITTIVITY, UnitSystem


@dataclass(frozen=True)
class PotentialConfig:
    permittivity: float
    patches: tuple
    subsampling_rhs: int = 1
    subsampling_force: int = 1


@dataclass(frozen=True)
class InsertionConfig:
    """Random insertion near an inflow face, values in lattice units."""

    radius: float
    density: float
    charge: float
    rate: float
    face: str = "y-"
    signs: str = "random"
    speed: float = 0.0
    lo: tuple = None
    hi: tuple = None


@dataclass(frozen=True)
class OutputPlan:
    metrics_every: int = 1
    snapshot_every: int = 0
    trajectory_every: int = 0


@dataclass
class ScenarioConfig:
    name: str
    cells: tuple
    blocks: tuple
    periodic: tuple
    units: UnitSystem
    trt: TrtParams
    acceleration: tuple = (0.0, 0.0, 0.0)
    patches: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    potential: PotentialConfig = None
    multigrid: MgConfig = field(default_factory=MgConfig)
    particles: list = field(default_factory=list)
    insertion: InsertionConfig = None
    lubrication: LubricationConfig = field(default_factory=lambda: LubricationConfig(enabled=False))
    restitution: float = 0.0
    max_displacement: float = 0.5
    steps: int = 0
    seed: int = 0
    output: OutputPlan = field(default_factory=OutputPlan)


def _vec(text, n=3, kind=float, name="value"):
    parts = text.split()
    if len(parts) == 1 and n > 1:
        parts = parts * n
    if len(parts) != n:
        raise ConfigurationError(f"{name}: expected {n} values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"{name}: cannot parse {text!r}") from None


def _bools(text, name):
    table = {"yes": True, "true": True, "on": True, "1": True,
             "no": False, "false": False, "off": False, "0": False}
    out = []
    for p in text.split():
        if p.lower() not in table:
            raise ConfigurationError(f"{name}: not a boolean: {p!r}")
        out.append(table[p.lower()])
    if len(out) == 1:
        out *= 3
    if len(out) != 3:
        raise ConfigurationError(f"{name}: expected 3 booleans")
    return tuple(out)


def _number(section, key, default=None, kind=float):
    if key not in section:
        if default is None:
            raise ConfigurationError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return kind(section[key])
    except ValueError:
        raise ConfigurationError(f"[{section.name}] {key}: cannot parse {section[key]!r}") from None


def _range2(section):
    lo = _vec(section["lo"], 2, int, f"[{section.name}] lo") if "lo" in section else None
    hi = _vec(section["hi"], 2, int, f"[{section.name}] hi") if "hi" in section else None
    return lo, hi


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, name=Path(path).stem)


def parse_config(text, name="scenario"):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed scenario file: {exc}") from None
    known = {"scenario", "domain", "fluid", "potential", "multigrid", "insertion",
             "lubrication", "contacts", "output"}
    for s in cp.sections():
        head = s.split(":", 1)[0]
        if ":" in s and head in ("lbm", "beam", "potential", "particles"):
            continue
        if s not in known:
            raise ConfigurationError(f"unknown section [{s}]")

    scen = cp["scenario"] if cp.has_section("scenario") else {}
    if not cp.has_section("domain"):
        raise ConfigurationError("missing [domain] section")
    dom = cp["domain"]
    cells = _vec(dom["cells"], 3, int, "cells")
    blocks = _vec(dom.get("blocks", dom["cells"]), 3, int, "blocks")
    periodic = _bools(dom.get("periodic", "no"), "periodic")

    fl = cp["fluid"] if cp.has_section("fluid") else cp["DEFAULT"]
    tau = _number(fl, "tau", 1.0) if "tau" in fl else 1.0
    magic = fl.get("magic", "mid")
    try:
        magic = float(magic)
    except ValueError:
        pass
    trt = TrtParams.from_name(tau, magic)

    pot = cp["potential"] if cp.has_section("potential") else None
    reference = _number(pot, "reference", 1.0) if pot is not None else 1.0
    physical = "dx" in dom
    if physical:
        dx = _number(dom, "dx")
        units = UnitSystem.from_viscosity(dx, _number(fl, "viscosity"), tau,
                                          _number(fl, "density", 1.0), reference)
    else:
        units = UnitSystem(potential=reference)

    def length(v):
        return units.to_lattice(v, "length")

    def velocity(v):
        return tuple(units.to_lattice(np.asarray(v, dtype=float), "velocity"))

    acceleration = tuple(float(a) for a in units.to_lattice(
        np.array(_vec(fl.get("acceleration", "0 0 0"), 3, float, "acceleration")), "acceleration"))

    patches, obstacles = [], []
    for s in cp.sections():
        if s.startswith("lbm:"):
            sec = cp[s]
            kind = sec.get("kind", "noslip")
            vel = velocity(_vec(sec.get("velocity", "0 0 0"), 3, float, f"[{s}] velocity"))
            dens = _number(sec, "density", 1.0)
            lo, hi = _range2(sec)
            patches.append(Patch(sec["face"], BoundaryCondition(kind, vel, dens), lo, hi))
        elif s.startswith("beam:"):
            sec = cp[s]
            vel = velocity(_vec(sec.get("velocity", "0 0 0"), 3, float, f"[{s}] velocity"))
            obstacles.append(Obstacle(_vec(sec["lo"], 3, int, f"[{s}] lo"),
                                      _vec(sec["hi"], 3, int, f"[{s}] hi"),
                                      BoundaryCondition(sec.get("kind", "noslip"), vel)))

    potential = None
    if pot is not None:
        eps_r = _number(pot, "relative_permittivity", 1.0)
        permittivity = eps_r * VACUUM_PERMITTIVITY if physical else eps_r
        ppatches = []
        for s in cp.sections():
            if s.startswith("potential:"):
                sec = cp[s]
                lo, hi = _range2(sec)
                value = _number(sec, "value", 0.0)
                kind = sec.get("kind", "dirichlet")
                # Neumann values are normal derivatives in V/m
                scaled = value / reference if kind == "dirichlet" else value * units.dx / reference
                ppatches.append(PotentialPatch(sec["face"], kind, scaled, lo, hi))
        potential = PotentialConfig(permittivity, tuple(ppatches),
                                    _number(pot, "subsampling_rhs", 1, int),
                                    _number(pot, "subsampling_force", 1, int))

    mg = MgConfig()
    if cp.has_section("multigrid"):
        m = cp["multigrid"]
        mg = MgConfig(
            pre_smoothing=_number(m, "pre", 3, int),
            post_smoothing=_number(m, "post", 3, int),
            correction_factor=_number(m, "correction", 2.0),
            tolerance=_number(m, "tolerance", 1.5e-8),
            max_cycles=_number(m, "max_cycles", 50, int),
            max_levels=_number(m, "max_levels", 7, int),
            coarse_mode=m.get("coarse_mode", "relative"),
            coarse_tolerance=_number(m, "coarse_tolerance", 1e-8),
            coarse_iterations=_number(m, "coarse_iterations", 0, int),
        )

    charge_unit = ELEMENTARY_CHARGE if physical else 1.0
    rho_unit = units.density if physical else 1.0
    particles = []
    next_id = 0
    for s in cp.sections():
        if not s.startswith("particles:"):
            continue
        sec = cp[s]
        radius = length(_number(sec, "radius"))
        density = _number(sec, "density", rho_unit) / rho_unit
        charge = _number(sec, "charge", 0.0) * charge_unit
        origin = np.array([length(v) for v in _vec(sec["origin"], 3, float, f"[{s}] origin")])
        count = _vec(sec.get("count", "1 1 1"), 3, int, f"[{s}] count")
        spacing = np.array([length(v) for v in _vec(sec.get("spacing", "0"), 3, float, f"[{s}] spacing")])
        vel = velocity(_vec(sec.get("velocity", "0 0 0"), 3, float, f"[{s}] velocity"))
        for k, j, i in itertools.product(range(count[2]), range(count[1]), range(count[0])):
            pos = origin + spacing * np.array([i, j, k])
            particles.append(SphereParticle(next_id, pos, radius, density, charge, vel))
            next_id += 1

    insertion = None
    if cp.has_section("insertion"):
        sec = cp["insertion"]
        radius = length(_number(sec, "radius"))
        speed = units.to_lattice(_number(sec, "speed"), "velocity")
        face = sec.get("face", "y-")
        axis = "xyz".index(face[0])
        lo, hi = _range2(sec)
        t = [a for a in range(3) if a != axis]
        lo = lo or (0, 0)
        hi = hi or (cells[t[0]], cells[t[1]])
        area = (hi[0] - lo[0]) * (hi[1] - lo[1])
        volume = 4.0 / 3.0 * np.pi * radius**3
        # spheres per step so that spheres carried at the mean inflow speed
        # fill the given solid fraction
        rate = _number(sec, "solid_fraction") * area * speed / volume
        insertion = InsertionConfig(
            radius, _number(sec, "density", rho_unit) / rho_unit,
            _number(sec, "charge", 0.0) * charge_unit, rate, face,
            sec.get("signs", "random"), speed, lo, hi)

    lub = LubricationConfig(enabled=False)
    if cp.has_section("lubrication"):
        sec = cp["lubrication"]
        lub = LubricationConfig(
            cutoff=_number(sec, "cutoff", 2.0 / 3.0),
            min_gap=_number(sec, "min_gap", 0.01),
            max_separation_velocity=_number(sec, "max_separation_velocity", 0.02),
            enabled=sec.getboolean("enabled", True),
        )

    restitution, max_disp = 0.0, 0.5
    if cp.has_section("contacts"):
        restitution = _number(cp["contacts"], "restitution", 0.0)
        max_disp = _number(cp["contacts"], "max_displacement", 0.5)

    out = OutputPlan()
    if cp.has_section("output"):
        sec = cp["output"]
        out = OutputPlan(_number(sec, "metrics_every", 1, int),
                         _number(sec, "snapshot_every", 0, int),
                         _number(sec, "trajectory_every", 0, int))

    cfg = ScenarioConfig(
        name=scen.get("name", name) if scen else name,
        cells=cells, blocks=blocks, periodic=periodic, units=units, trt=trt,
        acceleration=acceleration, patches=patches, obstacles=obstacles,
        potential=potential, multigrid=mg, particles=particles, insertion=insertion,
        lubrication=lub, restitution=restitution, max_displacement=max_disp,
        steps=int(scen.get("steps", 0)) if scen else 0,
        seed=int(scen.get("seed", 0)) if scen else 0,
        output=out,
    )
    validate(cfg)
    return cfg


def validate(cfg):
    for a in range(3):
        if cfg.cells[a] % cfg.blocks[a]:
            raise ConfigurationError(f"axis {'xyz'[a]}: {cfg.cells[a]} cells not divisible by {cfg.blocks[a]}")
    for o in cfg.obstacles:
        for a in range(3):
            if not 0 <= o.lo[a] < o.hi[a] <= cfg.cells[a]:
                raise ConfigurationError(f"beam {o.lo}..{o.hi} outside the domain")
    for p in cfg.particles:
        for a in range(3):
            if not cfg.periodic[a] and not p.radius <= p.position[a] <= cfg.cells[a] - p.radius:
                raise ConfigurationError(f"particle {p.id} at {tuple(p.position)} crosses a wall")
    if cfg.steps < 0:
        raise ConfigurationError("steps must be non-negative")
