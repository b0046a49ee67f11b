"""Automatic structural search for isometric tensor networks."""
from .builders import binary_mera, layered_ertn, randomize, tetramer_singlet, top_only
from .contraction import energy, energy_and_gradients, environment, state_energy, to_state_vector
from .models import (TwoSiteHamiltonian, build_random_xy, build_tetramer, exact_ground, heisenberg_ring,
                     xy_hamiltonian)
from .network import NodeKind, TensorNetwork, deserialize, dof_count, serialize, validate
from .optim import AdamState, Schedule, optimize
from .sdrg import build_er_sdrg
from .search import SearchConfig, run_search

__all__ = [
    "AdamState", "NodeKind", "Schedule", "SearchConfig", "TensorNetwork", "TwoSiteHamiltonian",
    "binary_mera", "build_er_sdrg", "build_random_xy", "build_tetramer", "deserialize", "dof_count",
    "energy", "energy_and_gradients", "environment", "exact_ground", "heisenberg_ring", "layered_ertn",
    "optimize", "randomize", "run_search", "serialize", "state_energy", "tetramer_singlet",
    "to_state_vector", "top_only", "validate", "xy_hamiltonian",
]
