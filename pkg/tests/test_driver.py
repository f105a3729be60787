import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmcharge.cli import main
from lbmcharge.driver.config import load_config, parse_config
from lbmcharge.driver.metrics import (
    SteadyStateDetector, Throughput, drag_coefficient, potential_error, steady_state,
)
from lbmcharge.driver.output import CsvLog, read_vtk, write_vtk
from lbmcharge.driver.simulation import SWEEPS, Simulation, charge_weighted_centroid
from lbmcharge.driver.units import ELEMENTARY_CHARGE, UnitSystem
from lbmcharge.errors import ConfigurationError, UndefinedDragError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

WALLS = "".join(f"[lbm:{f}]\nface = {f}\n" for f in ("x-", "x+", "y-", "y+", "z-", "z+"))

# lattice units: no dx, so every value is taken as is
BOX = """
[scenario]
steps = 4
seed = 3

[domain]
cells = 16 16 16
blocks = 8 8 8

[fluid]
tau = 1.0
magic = mid

""" + WALLS + """
[potential]
relative_permittivity = 1.0

[potential:lo]
face = z-
value = -0.01
[potential:hi]
face = z+
value = 0.0
""" + "".join(f"[potential:{f}]\nface = {f}\nkind = neumann\n" for f in ("x-", "x+", "y-", "y+")) + """
[particles:a]
radius = 2.5
density = 1.5
charge = 1.0
origin = 5.0 5.0 8.0
count = 2 2 1
spacing = 6.0

[lubrication]
enabled = yes
"""

CHANNEL = """
[scenario]
steps = 60
seed = 7

[domain]
cells = 16 32 16
blocks = 8 16 8

[fluid]
tau = 0.8

[lbm:in]
face = y-
kind = velocity
velocity = 0 0.02 0

[lbm:out]
face = y+
kind = pressure
density = 1.0
""" + "".join(f"[lbm:{f}]\nface = {f}\n" for f in ("x-", "x+", "z-", "z+")) + """
[insertion]
radius = 2.0
density = 1.2
charge = 1.0
signs = random
solid_fraction = 0.05
speed = 0.02
face = y-
"""


# units --------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-7, 1e-3), st.floats(1e-7, 1e-4), st.floats(0.51, 3.0), st.floats(1e-3, 1e3),
       st.sampled_from(["length", "time", "velocity", "acceleration", "viscosity", "density", "mass",
                        "force", "torque", "potential"]))
def test_unit_round_trip(dx, nu, tau, value, kind):
    u = UnitSystem.from_viscosity(dx, nu, tau, 1000.0, 2.0)
    assert u.to_physical(u.to_lattice(value, kind), kind) == pytest.approx(value, rel=1e-12)


def test_viscosity_maps_onto_tau():
    u = UnitSystem.from_viscosity(10e-6, 1e-6, 1.7)
    assert u.dt == pytest.approx(4e-5)
    assert u.to_lattice(1e-6, "viscosity") == pytest.approx((1.7 - 0.5) / 3)


def test_unit_errors():
    with pytest.raises(ConfigurationError):
        UnitSystem(dx=0.0)
    with pytest.raises(ConfigurationError, match="unknown"):
        UnitSystem().to_lattice(1.0, "charge")


def test_lattice_units_are_identity():
    u = UnitSystem.lattice()
    assert all(v == 1.0 for v in u.factors.values())


# configuration ------------------------------------------------------------------


def test_small_agglomeration_scene():
    cfg = load_config(SCENARIOS / "agglomeration_small.ini")
    assert cfg.cells == (64, 128, 64) and cfg.blocks == (32, 64, 32)
    assert len(cfg.particles) == 27
    p = cfg.particles[0]
    assert p.radius == pytest.approx(6.0)
    assert p.charge == pytest.approx(8000 * ELEMENTARY_CHARGE)
    assert p.density == pytest.approx(1.14)
    assert tuple(p.position) == pytest.approx((20.0, 52.0, 20.0))
    assert cfg.particles[1].position[0] == pytest.approx(32.0)
    # 1 mm/s with dx = 10 um and dt = 40 us
    vel = {pt.face: pt.condition.velocity for pt in cfg.patches if pt.condition.kind == "velocity"}
    assert vel["y-"] == pytest.approx((0.0, 4e-3, 0.0))
    values = {pt.face: pt.value for pt in cfg.potential.patches}
    assert values["z-"] == -100.0 and values["z+"] == 0.0
    assert cfg.multigrid.pre_smoothing == cfg.multigrid.post_smoothing == 3
    assert cfg.steps == 100 and cfg.output.trajectory_every == 10


def test_full_agglomeration_scene_parses():
    cfg = load_config(SCENARIOS / "agglomeration.ini")
    assert cfg.cells == (256, 576, 256)
    assert len(cfg.particles) == 864
    assert cfg.multigrid.max_levels == 7
    ids = [p.id for p in cfg.particles]
    assert ids == sorted(set(ids))


def test_separation_scene_parses():
    cfg = load_config(SCENARIOS / "separation.ini")
    ins = cfg.insertion
    assert ins.radius == pytest.approx(8.0)
    assert ins.speed == pytest.approx(4e-3)
    assert ins.rate == pytest.approx(0.04 * 256 * 192 * 4e-3 / (4 / 3 * math.pi * 512))
    assert len(cfg.obstacles) == 1
    kinds = {pt.face: pt.condition.kind for pt in cfg.patches}
    assert kinds["y-"] == "velocity" and kinds["y+"] == "pressure"
    assert cfg.lubrication.enabled


@pytest.mark.parametrize("text,match", [
    ("[domain]\ncells = 8 8\n", "expected 3"),
    ("[domain]\ncells = 8 8 8\nblocks = 3 8 8\n", "divisible"),
    ("[domain]\ncells = 8 8 8\n[nonsense]\n", "unknown section"),
    ("[fluid]\ntau = 1\n", "missing \\[domain\\]"),
    ("[domain]\ncells = 8 8 8\nperiodic = maybe\n", "boolean"),
    ("[domain]\ncells = 8 8 8\n[scenario]\nsteps = -1\n" + WALLS, "non-negative"),
    ("[domain]\ncells = 8 8 8\n[particles:a]\nradius = 3\norigin = 1 4 4\n" + WALLS, "crosses a wall"),
    ("[domain\ncells = 8 8 8\n", "malformed"),
    ("[domain]\ncells = 8 8 8\n[fluid]\ntau = abc\n", "cannot parse"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_config(text)


def test_missing_file_is_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_unknown_magic_parameter_name():
    with pytest.raises(ConfigurationError):
        parse_config("[domain]\ncells = 8 8 8\n[fluid]\ntau = 1\nmagic = bogus\n")


def test_numeric_magic_parameter():
    cfg = parse_config("[domain]\ncells = 8 8 8\nperiodic = yes\n[fluid]\ntau = 1.2\nmagic = 0.25\n")
    assert cfg.trt.magic == 0.25


# metrics ------------------------------------------------------------------------


def test_stokes_drag_normalises_to_one():
    r, nu, u = 4.0, 0.1, 2e-3
    assert drag_coefficient(6 * math.pi * nu * u * r, u, r, nu) == pytest.approx(1.0, rel=1e-15)


def test_zero_mean_velocity_is_undefined():
    with pytest.raises(UndefinedDragError):
        drag_coefficient(1.0, 0.0, 4.0, 0.1)


def test_steady_state_detector():
    det = SteadyStateDetector(1e-6)
    assert not det.update(1.0)
    assert not det.update(1.1)
    assert det.update(1.1 + 1e-8)
    assert steady_state([0.0, 0.0])
    capped = SteadyStateDetector(1e-12, max_steps=10)
    assert capped.update(1.0, step=10) and capped.capped


def test_potential_error_norms():
    exact = np.array([1.0, 2.0, 4.0, 8.0])
    num = np.array([1.0, 2.2, 4.0, 7.0])
    l2, inf = potential_error(num, exact)
    assert l2 == pytest.approx(math.sqrt((0.1**2 + 0.125**2) / 4))
    assert inf == pytest.approx(-0.125)


def test_throughput_definitions():
    t = Throughput(cells=1000, fluid_cells=800, steps=50, seconds=0.5)
    assert t.mlups == pytest.approx(0.1)
    assert t.mflups == pytest.approx(0.08)
    assert Throughput(1, 1, 1, 0.0).mlups == 0.0


# output -------------------------------------------------------------------------


def test_vtk_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fields = {"p": rng.standard_normal((3, 4, 5)), "u": rng.standard_normal((3, 4, 5, 3))}
    write_vtk(tmp_path / "a.vtk", fields, spacing=1e-5)
    back = read_vtk(tmp_path / "a.vtk")
    assert np.array_equal(back["p"], fields["p"]) and np.array_equal(back["u"], fields["u"])
    header = (tmp_path / "a.vtk").read_text().splitlines()[:8]
    assert "DIMENSIONS 4 5 6" in header and "CELL_DATA 60" in header


def test_vtk_rejects_mismatched_fields(tmp_path):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "b.vtk", {"a": np.zeros((2, 2, 2)), "b": np.zeros((2, 2, 3))})


def test_csv_log_keeps_full_precision(tmp_path):
    with CsvLog(tmp_path / "m.csv", ("step", "value")) as log:
        log.write((1, 0.1 + 0.2))
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "step,value"
    assert float(lines[1].split(",")[1]) == 0.1 + 0.2


# simulation ---------------------------------------------------------------------


def test_sweep_order_per_step():
    sim = Simulation(parse_config(BOX), trace=True)
    sim.run(2)
    assert sim.trace == [(s, name) for s in range(2) for name in SWEEPS]


def test_runs_are_deterministic():
    out = []
    for _ in range(2):
        sim = Simulation(parse_config(BOX))
        sim.run()
        out.append((sim.particles.positions.copy(), sim.pdfs.src.gather().copy()))
    assert np.array_equal(out[0][0], out[1][0]) and np.array_equal(out[0][1], out[1][1])


def test_empty_run():
    cfg = parse_config("[domain]\ncells = 8 8 8\nperiodic = yes\n")
    sim = Simulation(cfg)
    summary = sim.run(0)
    assert summary["steps"] == 0 and summary["particles"] == 0
    assert summary["fluid_cells"] == 512


def test_charged_spheres_drift_toward_opposite_plate():
    sim = Simulation(parse_config(BOX))
    z0 = sim.particles.positions[:, 2].copy()
    sim.run(4)
    # positive charges, lower plate at a lower potential
    assert np.all(sim.particles.positions[:, 2] < z0)
    assert sim.residual < sim.cfg.multigrid.tolerance


def test_insertion_and_outflow():
    cfg = parse_config(CHANNEL)
    assert cfg.insertion.rate == pytest.approx(0.05 * 16 * 16 * 0.02 / (4 / 3 * math.pi * 8))
    sim = Simulation(cfg)
    sim.run()
    n = len(sim.particles)
    assert n == math.floor(cfg.insertion.rate * 60 + 1e-9)
    p = sim.particles
    assert np.all(p.positions[:, 0] - p.radii >= 0) and np.all(p.positions[:, 0] + p.radii <= 16)
    assert set(np.sign(p.charges)) <= {-1.0, 1.0}


def test_outflow_removes_spheres():
    text = CHANNEL.replace("[insertion]", "[particles:a]\nradius = 2.0\norigin = 8 28.6 8\n"
                                          "velocity = 0 0.3 0\n[unused]").split("[unused]")[0]
    sim = Simulation(parse_config(text))
    assert len(sim.particles) == 1
    sim.run(3)
    assert len(sim.particles) == 0


def test_output_files(tmp_path):
    text = BOX.replace("[lubrication]", "[output]\nmetrics_every = 2\nsnapshot_every = 4\n"
                                        "trajectory_every = 1\n[lubrication]")
    sim = Simulation(parse_config(text))
    sim.run(4, tmp_path)
    metrics = (tmp_path / "metrics.csv").read_text().splitlines()
    assert metrics[0].split(",")[:3] == ["step", "residual", "cycles"] and len(metrics) == 3
    assert len((tmp_path / "trajectories.csv").read_text().splitlines()) == 1 + 4 * 4
    snap = read_vtk(tmp_path / "snapshot_00000004.vtk")
    assert set(snap) == {"density", "velocity", "flags", "potential"}
    assert snap["potential"].shape == (16, 16, 16)
    timing = (tmp_path / "timing.csv").read_text()
    assert all(name in timing for name in SWEEPS) and "mflups" in timing


def test_charge_weighted_centroid():
    sim = Simulation(parse_config(BOX))
    assert charge_weighted_centroid(sim.particles) == pytest.approx([8.0, 8.0, 8.0])


# command line -------------------------------------------------------------------


def write(tmp_path, text, name="case.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_run(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, BOX), "--steps", "2", "--workers", "2", "--output", str(out)]) == 0
    assert "steps 2" in capsys.readouterr().out
    assert (out / "metrics.csv").exists()


def test_cli_output_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LBMCHARGE_OUTPUT", str(tmp_path / "env"))
    assert main(["run", write(tmp_path, BOX), "--steps", "1"]) == 0
    assert (tmp_path / "env" / "timing.csv").exists()


def test_cli_configuration_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    assert main(["run", write(tmp_path, "[domain]\ncells = 8 8 7\nblocks = 4 4 4\n")]) == 2
    assert main(["run", write(tmp_path, BOX), "--workers", "0"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_divergence(tmp_path, capsys):
    text = """
[domain]
cells = 8 8 8
[fluid]
tau = 0.5001
[lbm:a]
face = x-
kind = velocity
velocity = 0.4 0.2 0
[lbm:b]
face = x+
kind = velocity
velocity = -0.4 0 0.3
""" + "".join(f"[lbm:{f}]\nface = {f}\n" for f in ("y-", "y+", "z-", "z+"))
    assert main(["run", write(tmp_path, text), "--steps", "200"]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_cli_validate_volume(capsys):
    assert main(["validate", "volume"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)


def test_cli_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        main(["validate", "nothing"])
