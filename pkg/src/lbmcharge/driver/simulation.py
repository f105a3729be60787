"""The coupled time loop.

Per step: set the potential right-hand side, cycle the multigrid solver to
tolerance, fill boundary populations, stream and collide, then add
hydrodynamic, lubrication and Coulomb forces and move the bodies.
"""

from __future__ import annotations

import math
import time
from collections import defaultdict
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from ..boundaries import KINDS, LbmBoundaries, face_axis
from ..electrostatics import (
    PotentialBoundaries, adapt_rhs, assemble_stencils, check_compatibility, coulomb_force,
    set_charge_rhs,
)
from ..errors import SimulationError
from ..grid import FLUID, Domain, Workers, decompose, exchange_ghosts
from ..lbm import PdfField
from ..lubrication import lubrication_sweep
from ..multigrid import MultigridSolver
from ..particles import (
    ObstacleMap, ParticleSystem, SphereParticle, hydrodynamic_force, integrate_bodies,
    resolve_contacts, walls_of,
)
from .metrics import Throughput
from .output import TRAJECTORY_COLUMNS, CsvLog, trajectory_rows, write_vtk

SWEEPS = (
    "set_rhs",
    "multigrid",
    "lbm_boundaries",
    "stream_collide",
    "hydrodynamic_force",
    "lubrication",
    "electrostatic_force",
    "particle_motion",
)

METRIC_COLUMNS = ("step", "residual", "cycles", "particles", "covered", "uncovered")


class Simulation:
    """All state of one scenario run.

    ``workers`` only changes how blocks are distributed over threads; the
    block layout comes from the configuration, so results do not depend on
    it.
    """

    def __init__(self, cfg, workers=1, seed=None, trace=False):
        self.cfg = cfg
        self.record_trace = trace
        self.domain = Domain(cfg.cells, cfg.blocks, cfg.periodic)
        self.workers = Workers(decompose(self.domain, workers))
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.boundaries = LbmBoundaries(self.domain, cfg.patches, cfg.obstacles)
        self.particles = ParticleSystem(cfg.particles)
        self.obstacles = ObstacleMap(self.domain)
        self.pdfs = PdfField(self.domain)
        self.lengths = np.array(self.domain.global_cells, dtype=float)
        self.walls = walls_of(self.domain)
        self.acceleration = np.asarray(cfg.acceleration, dtype=float)
        self.units = cfg.units
        self.step_count = 0
        self.timers = defaultdict(float)
        self.trace = []
        self.residual = 0.0
        self.cycles = 0
        self._inserted = 0.0
        self._next_id = int(self.particles.ids.max()) + 1 if len(self.particles) else 0
        self._open_faces = self._find_open_faces()

        self.solver = None
        if cfg.potential is not None:
            pot = cfg.potential
            self.potential_bc = PotentialBoundaries(self.domain, pot.patches)
            stencils, self.rhs_bc, self.potential_flags = assemble_stencils(self.domain, self.potential_bc)
            self.solver = MultigridSolver(stencils, cfg.multigrid, self.workers,
                                          singular=self.potential_bc.singular)
        self._remap()

    # geometry -----------------------------------------------------------

    def _find_open_faces(self):
        faces = set()
        for p in self.cfg.patches:
            if p.condition.kind in ("velocity", "pressure"):
                faces.add(p.face)
        return faces

    def _remap(self, previous_state=None):
        static = self.boundaries.static
        self.obstacles.map(self.particles, static, self.workers)
        self.flags = self.boundaries.refresh(self.obstacles.owner)
        return self.obstacles.reconstruct(self.pdfs, self.particles, static, previous_state)

    @property
    def fluid_cells(self):
        return self.flags.count(FLUID)

    # sweeps ---------------------------------------------------------------

    @contextmanager
    def _sweep(self, name):
        if self.record_trace:
            self.trace.append((self.step_count, name))
        t0 = time.perf_counter()
        try:
            yield
        except SimulationError as exc:
            exc.step = getattr(exc, "step", None) or self.step_count
            exc.sweep = name
            exc.args = (f"{exc.args[0] if exc.args else exc} [step {self.step_count}, sweep {name}]",)
            raise
        finally:
            self.timers[name] += time.perf_counter() - t0

    def _rhs_charges(self):
        pot = self.cfg.potential
        return self.units.charge_to_rhs(self.particles.charges, pot.permittivity)

    def set_rhs(self):
        pot = self.cfg.potential
        rhs = set_charge_rhs(self.domain, self.particles, pot.subsampling_rhs, self._rhs_charges())
        adapt_rhs(rhs, self.rhs_bc)
        for b in range(self.domain.n_blocks):
            self.solver.rhs[b][...] = rhs[b]
        if self.step_count == 0:
            check_compatibility(rhs, self.potential_bc)

    def electrostatic_forces(self):
        pot = self.cfg.potential
        raw = coulomb_force(self.solver.phi, self.particles, pot.subsampling_force,
                            self.particles.charges)
        return self.units.to_lattice(raw * self.units.coulomb_to_newton(), "force")

    def step(self):
        p = self.particles
        cfg = self.cfg
        with self._sweep("set_rhs"):
            if self.solver is not None:
                self.set_rhs()
        with self._sweep("multigrid"):
            if self.solver is not None:
                self.cycles, self.residual = self.solver.solve()
        with self._sweep("lbm_boundaries"):
            exchange_ghosts(self.pdfs.src, "d3q19")
            self.boundaries.apply(self.pdfs, self.workers, p, self.obstacles.owner)
        with self._sweep("stream_collide"):
            self.pdfs.stream_collide(self.workers, self.flags, cfg.trt, self.acceleration,
                                     step=self.step_count)
        with self._sweep("hydrodynamic_force"):
            if len(p):
                f, t = hydrodynamic_force(self.pdfs, self.flags, self.obstacles, p, self.workers)
                p.forces += f
                p.torques += t
        with self._sweep("lubrication"):
            if len(p) and cfg.lubrication.enabled:
                lubrication_sweep(p, self.walls, cfg.trt.viscosity, cfg.lubrication,
                                  self.lengths, self.domain.periodicity)
        with self._sweep("electrostatic_force"):
            if len(p) and self.solver is not None:
                p.forces += self.electrostatic_forces()
        with self._sweep("particle_motion"):
            self.move_particles()
        self.step_count += 1

    def move_particles(self):
        p = self.particles
        cfg = self.cfg
        if len(p):
            integrate_bodies(p, 1.0, None, cfg.max_displacement)
            resolve_contacts(p, [w for w in self.walls if not self._is_open(w)], cfg.restitution,
                             self.lengths, self.domain.periodicity)
            for a in range(3):
                if self.domain.periodicity[a]:
                    p.positions[:, a] %= self.lengths[a]
        previous = (p.positions.copy(), p.velocities.copy(), p.omegas.copy())
        self._remove_outflow()
        self._insert()
        self._remap(previous)

    def _is_open(self, wall):
        face = "xyz"[wall.axis] + ("-" if wall.normal > 0 else "+")
        return face in self._open_faces

    def _remove_outflow(self):
        """Drop bodies reaching an open face; previous owners keep the old indexing."""
        p = self.particles
        if not len(p) or not self._open_faces:
            return
        gone = np.zeros(len(p), dtype=bool)
        for face in self._open_faces:
            axis, side = face_axis(face)
            if side:
                gap = self.lengths[axis] - p.positions[:, axis] - p.radii
                toward = p.velocities[:, axis] > 0
            else:
                gap = p.positions[:, axis] - p.radii
                toward = p.velocities[:, axis] < 0
            gone |= (gap < 1.0) & toward
        if gone.any():
            p.remove(gone)

    def _insert(self):
        ins = self.cfg.insertion
        if ins is None:
            return
        self._inserted += ins.rate
        axis, side = face_axis(ins.face)
        t = [a for a in range(3) if a != axis]
        while self._inserted >= 1.0:
            self._inserted -= 1.0
            for _ in range(20):
                pos = np.empty(3)
                for k, a in enumerate(t):
                    lo = ins.lo[k] + ins.radius + 0.5
                    hi = ins.hi[k] - ins.radius - 0.5
                    pos[a] = self.rng.uniform(lo, hi)
                pos[axis] = self.lengths[axis] - ins.radius - 1.5 if side else ins.radius + 1.5
                p = self.particles
                finite = np.isfinite(p.positions).all(axis=1)
                d = np.linalg.norm(p.positions[finite] - pos, axis=1) if finite.any() else np.array([])
                if (d < p.radii[finite] + ins.radius + 0.5).any():
                    continue
                if ins.signs == "random":
                    sign = 1.0 if self.rng.random() < 0.5 else -1.0
                else:
                    sign = -1.0 if ins.signs == "negative" else 1.0
                vel = np.zeros(3)
                vel[axis] = -ins.speed if side else ins.speed
                self.particles.add(SphereParticle(self._next_id, pos, ins.radius, ins.density,
                                                  sign * abs(ins.charge), vel))
                self._next_id += 1
                break

    # run --------------------------------------------------------------------

    def throughput(self):
        steps = max(self.step_count, 1)
        lbm = Throughput(self.domain.n_cells, self.fluid_cells, steps, self.timers["stream_collide"])
        mg = Throughput(self.domain.n_cells, self.fluid_cells, steps, self.timers["multigrid"])
        return {"mflups": lbm.mflups, "mlups": mg.mlups}

    def run(self, steps=None, output=None, log=None):
        """Run ``steps`` steps (config value by default) writing the output plan."""
        cfg = self.cfg
        steps = cfg.steps if steps is None else steps
        plan = cfg.output
        out = Path(output) if output is not None else None
        metrics = traj = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            metrics = CsvLog(out / "metrics.csv", METRIC_COLUMNS)
            traj = CsvLog(out / "trajectories.csv", TRAJECTORY_COLUMNS)
        try:
            for _ in range(steps):
                self.step()
                s = self.step_count
                if metrics is not None and plan.metrics_every and s % plan.metrics_every == 0:
                    metrics.write((s, self.residual, self.cycles, len(self.particles),
                                   self.obstacles.covered, self.obstacles.uncovered))
                if traj is not None and plan.trajectory_every and s % plan.trajectory_every == 0:
                    for row in trajectory_rows(s, self.particles):
                        traj.write(row)
                if out is not None and plan.snapshot_every and s % plan.snapshot_every == 0:
                    self.snapshot(out / f"snapshot_{s:08d}.vtk")
                if log is not None:
                    log(self)
        finally:
            for f in (metrics, traj):
                if f is not None:
                    f.close()
        if out is not None:
            with CsvLog(out / "timing.csv", ("sweep", "seconds")) as t:
                for name in SWEEPS:
                    t.write((name, self.timers[name]))
                for k, v in self.throughput().items():
                    t.write((k, v))
        return self.summary()

    def snapshot(self, path):
        rho, u = self.pdfs.moments(self.flags, self.acceleration)
        fields = {"density": rho.gather(), "velocity": u.gather(),
                  "flags": self.flags.gather().astype(float)}
        if self.solver is not None:
            fields["potential"] = self.solver.phi.gather()
        write_vtk(path, fields, spacing=self.units.dx)

    def summary(self):
        s = {"steps": self.step_count, "particles": len(self.particles),
             "residual": self.residual, "fluid_cells": self.fluid_cells}
        s.update(self.throughput())
        return s


def charge_weighted_centroid(particles):
    w = np.abs(particles.charges)
    if not len(particles) or w.sum() == 0.0:
        return np.full(3, math.nan)
    return (particles.positions * w[:, None]).sum(axis=0) / w.sum()


__all__ = ["Simulation", "SWEEPS", "charge_weighted_centroid", "KINDS"]
