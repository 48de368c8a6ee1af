"""Variational upper bounds and lower-bound certificates for multi-polaron
Pekar-Tomasevich energies."""

from .grid_core import (CartesianGrid, CartesianWaveFunction, Density, RadialGrid,
                        RadialWaveFunction, coulomb_interaction, density, kinetic_energy,
                        log_radial_grid, normalize, pt_energy, scale_wavefunction)
from .pt_solver import (EnergyEstimate, HartreeProvider, SolverConfig, binding_check,
                        hartree_sweep, minimize_hartree, minimize_pekar, pt_energy_scaled)
from .clusters import BoxConfiguration, ClusterPartition, box_distance, partition
from .bound_engine import (BoundCertificate, BoundParameters, optimal_partition_value,
                           schedule_general, schedule_strong, theorem1_certificate)
from .path_checks import (ConfinedPath, integrand_cluster_split_check, sample_confined_bridge,
                          verify_path_distance_bounds)

__version__ = "0.1.0"

__all__ = [
    "CartesianGrid",
    "CartesianWaveFunction",
    "Density",
    "RadialGrid",
    "RadialWaveFunction",
    "coulomb_interaction",
    "density",
    "kinetic_energy",
    "log_radial_grid",
    "normalize",
    "pt_energy",
    "scale_wavefunction",
    "EnergyEstimate",
    "HartreeProvider",
    "SolverConfig",
    "binding_check",
    "hartree_sweep",
    "minimize_hartree",
    "minimize_pekar",
    "pt_energy_scaled",
    "BoxConfiguration",
    "ClusterPartition",
    "box_distance",
    "partition",
    "BoundCertificate",
    "BoundParameters",
    "optimal_partition_value",
    "schedule_general",
    "schedule_strong",
    "theorem1_certificate",
    "ConfinedPath",
    "integrand_cluster_split_check",
    "sample_confined_bridge",
    "verify_path_distance_bounds",
]
