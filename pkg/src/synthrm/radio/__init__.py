"""Radio propagation: materials physics, antennas, ray tracing and radio maps."""
from .antenna import AntennaConfig, AntennaKind, antenna_gain, array_power_mean
from .physics import (
    Polarization,
    fresnel_kirchhoff_nu,
    fresnel_reflection,
    knife_edge_loss,
    noise_power,
    slab_transmission,
    wavelength,
)
from .tracer import InteractionKind, PropagationPath, RadioConfig, Tracer, compute_paths
from .radiomap import RadioMap, compute_radio_map

__all__ = [
    "AntennaConfig", "AntennaKind", "antenna_gain", "array_power_mean", "Polarization",
    "fresnel_kirchhoff_nu", "fresnel_reflection", "knife_edge_loss", "noise_power", "slab_transmission",
    "wavelength", "InteractionKind", "PropagationPath", "RadioConfig", "Tracer", "compute_paths",
    "RadioMap", "compute_radio_map",
]
