"""On-disk formats, deterministic seeding and the campaign driver."""
from .campaign import (
    STAGES,
    CampaignConfig,
    CampaignResult,
    ConfigError,
    Manifest,
    SampleRecord,
    TrajectorySpec,
    export_sample,
    place_transmitters,
    run_campaign,
    validate_dataset,
)
from .formats import (
    FormatError,
    read_pfm,
    read_pgm,
    read_ply,
    read_ppm,
    read_raster,
    read_scene,
    write_pfm,
    write_pgm,
    write_ply,
    write_ppm,
    write_raster,
    write_scene,
)
from .seeds import child_seed, splitmix64

__all__ = [
    "STAGES", "CampaignConfig", "CampaignResult", "ConfigError", "Manifest", "SampleRecord", "TrajectorySpec",
    "export_sample", "place_transmitters", "run_campaign", "validate_dataset", "FormatError", "read_pfm",
    "read_pgm", "read_ply", "read_ppm", "read_raster", "read_scene", "write_pfm", "write_pgm", "write_ply",
    "write_ppm", "write_raster", "write_scene", "child_seed", "splitmix64",
]
