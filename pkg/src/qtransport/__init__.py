"""Classical wave functions for deterministic transport: grids, operators, evolution,
automata and extended path weights."""
from . import automaton, evolution, extended, grid, model, observables, operators, wavefunction
from .errors import (BudgetError, ConsistencyError, ContractError, ConvergenceError, DegenerateError,
                     DomainError, InvertibilityError, NotApplicableError, NumericalError,
                     QTransportError, RealityError)
from .grid import ConfigurationGrid
from .model import ForceField
from .wavefunction import ComplexWaveFunction, RealWaveFunction

__version__ = "0.1.0"
