"""Symmetry-derived nodal surfaces and Feynman-Kac eigenvalue walks for few-electron atoms."""

from nodalgfk.configuration import ElectronConfig, pair_distance, to_cylindrical, to_spherical
from nodalgfk.nodal import STATES, StateSymmetry, crossing, nodal_cell, node_function, on_node
from nodalgfk.spectra import FitResult, fit_asymptote, log_series
from nodalgfk.trial import Hamiltonian, TrialWavefunction, local_energy, rayleigh_quotient

__version__ = "0.1.0"

__all__ = [
    "ElectronConfig",
    "FitResult",
    "Hamiltonian",
    "STATES",
    "StateSymmetry",
    "TrialWavefunction",
    "crossing",
    "fit_asymptote",
    "local_energy",
    "log_series",
    "nodal_cell",
    "node_function",
    "on_node",
    "pair_distance",
    "rayleigh_quotient",
    "to_cylindrical",
    "to_spherical",
]
