import numpy as np
import pytest

from qtransport import grid as gr
from qtransport import model, operators as op, wavefunction as wf
from qtransport.evolution import EvolutionPlan, evolve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def rotation_run():
    """128^2 rotation run shared by the unitarity, conservation, periodicity and constraint checks."""
    g = gr.ConfigurationGrid(2, 128, 8.0)
    f = model.rotation(1.0)
    q0 = wf.gaussian(g, [1.0, 0.0], 0.25)
    monitors = [op.hamiltonian_squared_explicit(f, g), op.angular_momentum(g, 3)]
    eps, steps = 1e-3, 10_000
    periodic_step = int(np.floor(2 * np.pi / eps))
    plan = EvolutionPlan(f, g, eps, steps, "unitary_midpoint", monitors, monitor_every=10,
                         snapshot_steps=(periodic_step,))
    rec = evolve(plan, q0)
    return {"grid": g, "model": f, "q0": q0, "record": rec, "plan": plan,
            "periodic_step": periodic_step}


@pytest.fixture(scope="session")
def rotation_spectrum64():
    g = gr.ConfigurationGrid(2, 64, 8.0)
    h = op.hamiltonian(model.rotation(1.0), g)
    return op.spectrum(h, 240, generator=op.angular_momentum(g, 3))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
