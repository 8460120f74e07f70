"""Engine configuration.

Every threshold used anywhere in the pipeline lives here, defaulting to the
values calibrated for the Subiaco deployment. Configs serialize to and from a
flat ``section.key = value`` text format so a run is fully reproducible from
its manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path


@dataclass
class CoreConfig:
    sor_k: int = 16                   # statistical outlier removal neighbors
    sor_std_mult: float = 2.0
    normal_radius: float = 0.8
    feature_radius: float = 0.6
    feature_radius_coarse: float = 1.2  # second radius for planarity persistence
    roughness_radius: float = 1.0      # cylinder radius for normal-direction roughness
    analysis_leaf: float = 0.25        # finest voxel level used by segmentation


@dataclass
class RegistrationConfig:
    pyramid: tuple = (1.0, 0.5, 0.25)
    coarse_mode: str = "require"      # require | auto | skip
    iss_salient_radius: float = 1.5
    iss_nonmax_radius: float = 2.0
    iss_gamma21: float = 0.975
    iss_gamma32: float = 0.975
    fpfh_radius: float = 2.0
    ransac_inlier_thresh: float = 0.6
    ransac_iterations: int = 20000
    ndt_cell_factor: float = 4.0      # NDT cell = factor * voxel leaf per level
    ndt_max_iter: int = 50
    ndt_tol_trans: float = 1e-4
    ndt_tol_rot: float = 1e-5
    icp_max_iter: int = 40
    icp_corr_dist: float = 2.0
    icp_tol_trans: float = 1e-6
    icp_tol_rot: float = 1e-7
    tukey_tau: float = 0.3
    huber_delta: float = 1.0
    plane_weight: float = 0.1         # plane-to-plane penalty weight
    plane_residual_max: float = 0.08
    plane_min_support: int = 500
    hessian_cond_max: float = 1e8
    seed: int = 20230


@dataclass
class FrameConfig:
    ground_tile: float = 20.0
    ground_band_quantile: float = 0.30
    ground_inlier_band: float = 0.10
    ground_min_candidates: int = 100
    ground_min_verticality: float = 0.7
    lod_spacing: float = 5.0
    lod_cylinder_radius: float = 1.0
    lod_min_count: int = 5
    lod_floor: float = 1e-4
    lod_scale: float = 1.0            # multiplies the computed grid (diagnostics)
    dedup_leaf: float = 0.25


@dataclass
class ProxyConfig:
    occupancy_voxel: float = 0.5
    min_component_points: int = 30
    ground_strip_height: float = 0.15
    hist_bins: int = 10
    cost_alpha: float = 1.0
    cost_beta: float = 2.0
    cost_gamma: float = 0.5
    gate_centroid: float = 2.0
    gate_iou: float = 0.1
    gate_cost: float = 3.5


@dataclass
class SegmentationConfig:
    knn: int = 20
    boundary_weight: float = 0.8      # Potts term weight
    max_rounds: int = 40
    ground_dist_max: float = 0.10
    ground_slope_max_deg: float = 5.0
    ground_point_fraction: float = 0.8
    ground_closing_tile: float = 5.0
    ground_closing_radius: float = 0.5
    building_planarity_min: float = 0.6
    building_verticality_max: float = 0.25
    building_residual_max: float = 0.08
    building_area_min: float = 6.0
    coplanar_merge_max_deg: float = 10.0
    veg_sphericity_min: float = 0.35
    veg_height_min: float = 0.5
    veg_azimuth_spread_min_deg: float = 30.0
    mobile_max_side: float = 5.0
    mobile_max_height: float = 3.0
    mobile_max_volume: float = 60.0
    persistence_planarity: float = 0.7
    persistence_fraction: float = 0.9
    priority_margin: float = 0.05
    facade_boundary_min: float = 1.0
    facade_normal_max_deg: float = 12.0
    footprint_iou_min: float = 0.3
    roof_tilt_max_deg: float = 25.0
    veg_cluster_floor: float = 0.8
    veg_cluster_coeff: float = 1.8
    veg_min_points: int = 200
    crown_slice: float = 1.0
    crown_marker_sep: float = 2.0
    crown_raster: float = 0.5
    dbscan_eps: float = 0.7
    dbscan_min_pts: int = 30
    ground_erosion: float = 0.15


@dataclass
class AssociationConfig:
    overlap_weight: float = 2.0       # multiplies the LoD-unsafe overlap penalty
    dummy_cost: float = 1.0           # split/merge slack per unmatched instance
    gate_iou: float = 0.05
    gate_centroid: float = 2.0


@dataclass
class ChangeConfig:
    voxel: float = 0.5
    sample_max_dist: float = 1.5      # nearest-point search radius per lattice sample
    lod_theta: float = 1.2            # displacement informative when > theta * LoD
    building_iou: float = 0.10
    building_dh: float = 0.50
    building_dv_rel: float = 0.10
    building_unchanged_iou: float = 0.20
    building_unchanged_dc: float = 1.5
    veg_iou: float = 0.08
    veg_dh: float = 0.30
    veg_dv_rel: float = 0.15
    veg_unchanged_iou: float = 0.20
    veg_unchanged_dc: float = 2.0
    mobile_unchanged_iou: float = 0.20
    mobile_unchanged_dc: float = 2.0
    ground_cell: float = 2.0
    ground_dz: float = 0.15
    ground_area_min: float = 25.0
    sigma_h: float = 0.05
    sigma_v: float = 0.05
    eps_v: float = 1e-6
    # confidence weights (w_h, w_v, w_o, w_c, w_perp)
    weights_building: tuple = (0.35, 0.30, 0.20, 0.10, 0.05)
    weights_vegetation: tuple = (0.30, 0.35, 0.15, 0.10, 0.10)
    weights_ground: tuple = (0.50, 0.00, 0.25, 0.00, 0.25)
    tau_c_building: float = 1.5
    tau_c_vegetation: float = 2.0
    tau_c_mobile: float = 2.0


@dataclass
class TilingConfig:
    size: float = 80.0
    overlap: float = 10.0
    threads: int = 1


@dataclass
class RenderConfig:
    resolution: float = 0.25          # meters per pixel


@dataclass
class Config:
    core: CoreConfig = field(default_factory=CoreConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    frame: FrameConfig = field(default_factory=FrameConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    change: ChangeConfig = field(default_factory=ChangeConfig)
    tiling: TilingConfig = field(default_factory=TilingConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    seed: int = 20230

    # ---- flat key/value serialization -------------------------------------

    def to_text(self) -> str:
        lines = []
        for sec in fields(self):
            value = getattr(self, sec.name)
            if dataclasses.is_dataclass(value):
                for f in fields(value):
                    lines.append(f"{sec.name}.{f.name} = {_fmt(getattr(value, f.name))}")
            else:
                lines.append(f"{sec.name} = {_fmt(value)}")
        return "\n".join(sorted(lines)) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def set_key(self, dotted: str, raw: str) -> None:
        """Set one ``section.key`` (or top-level key) from its text form."""
        parts = dotted.split(".")
        if len(parts) == 1:
            _assign(self, parts[0], raw)
            return
        if len(parts) != 2:
            raise KeyError(f"unknown config key: {dotted}")
        section = getattr(self, parts[0], None)
        if section is None or not dataclasses.is_dataclass(section):
            raise KeyError(f"unknown config section: {parts[0]}")
        _assign(section, parts[1], raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        cfg = cls()
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            cfg.set_key(key, raw)
        return cfg

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value)


def _assign(obj, name: str, raw: str) -> None:
    current = getattr(obj, name, None)
    if current is None and name not in {f.name for f in fields(obj)}:
        raise KeyError(f"unknown config key: {name}")
    if isinstance(current, bool):
        setattr(obj, name, raw.lower() in ("1", "true", "yes"))
    elif isinstance(current, int):
        setattr(obj, name, int(raw))
    elif isinstance(current, float):
        setattr(obj, name, float(raw))
    elif isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        setattr(obj, name, tuple(float(p) for p in parts))
    else:
        setattr(obj, name, raw.strip().strip("'\""))
