"""Pixel-aligned path-gain and SINR rasters from per-face VAS probes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..render import CameraModel
from ..scenegen import Scene
from ..vas import VasMesh
from .tracer import RadioConfig, Tracer


@dataclass(frozen=True, eq=False)
class RadioMap:
    path_gain_db: np.ndarray
    sinr_db: np.ndarray
    per_face_gain: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.path_gain_db.shape

    @property
    def per_face_gain_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            g = 10.0 * np.log10(self.per_face_gain)
        return np.where(self.per_face_gain > 0, g, np.nan)


def pixel_mean(mesh: VasMesh, face_values: np.ndarray) -> np.ndarray:
    """Average per-face values onto their source pixels; pixels without faces stay NaN."""
    H, W = mesh.height, mesh.width
    total = np.zeros(H * W)
    count = np.zeros(H * W)
    idx = mesh.pixel_of_face[:, 1] * W + mesh.pixel_of_face[:, 0]
    np.add.at(total, idx, face_values)
    np.add.at(count, idx, 1.0)
    with np.errstate(invalid="ignore"):
        out = total / count
    return out.reshape(H, W)


def compute_radio_map(scene: Scene, tx, camera: CameraModel, vas: VasMesh, config: RadioConfig | None = None,
                      tracer: Tracer | None = None, interferers=()) -> RadioMap:
    """Trace ``tx`` to every VAS face centroid and rasterize onto the camera grid.

    ``interferers`` are extra transmitter positions (same config) whose received
    power joins the SINR denominator; by default SINR equals SNR.
    """
    if (vas.height, vas.width) != (camera.height, camera.width):
        raise ValueError(f"VAS grid {(vas.height, vas.width)} does not match camera {(camera.height, camera.width)}")
    config = config or RadioConfig()
    tracer = tracer or Tracer(scene, config)
    if tracer.scene is not scene:
        raise ValueError("tracer was built for a different scene")
    if vas.num_faces:
        gain = tracer.path_gain(tx, vas.centroids)
    else:
        gain = np.zeros(0)
    g_pix = pixel_mean(vas, gain)
    with np.errstate(divide="ignore", invalid="ignore"):
        pg_db = np.where(g_pix > 0, 10.0 * np.log10(g_pix), np.nan)
    noise_mw = 10.0 ** (config.noise_dbm / 10.0)
    interference_mw = np.zeros_like(g_pix)
    for other in interferers:
        gi = pixel_mean(vas, tracer.path_gain(other, vas.centroids)) if vas.num_faces else np.zeros_like(g_pix)
        interference_mw += 10.0 ** (config.tx_power / 10.0) * np.nan_to_num(gi)
    with np.errstate(invalid="ignore"):
        sinr = config.tx_power + pg_db - 10.0 * np.log10(noise_mw + interference_mw)
    return RadioMap(pg_db, sinr, gain)
