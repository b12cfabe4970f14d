"""Desk-scale mmWave V2X link simulator.

Builds parametric urban-canyon scenes, traces LOS/reflected rays, synthesizes
narrowband MIMO channels, runs analog and hybrid (limited-feedback)
beamforming, and assembles situational rate / energy-efficiency maps with
coverage and outage statistics.
"""

from canyonwave.scene import (
    BasePlacement,
    Building,
    Material,
    Obstacle,
    Scene,
    SceneError,
    SceneInvariantError,
    SceneParseError,
    VehicleGrid,
    grid_positions,
    load_scene,
)
from canyonwave.raytracer import Ray, RaySet, Tracer, fresnel_reflection, trace
from canyonwave.phy import (
    ArrayGeometry,
    ChannelMatrix,
    Codebook,
    CodebookBudgetError,
    build_beam_codebook,
    build_rvq_codebook,
    steering_vector,
    synthesize_channel,
)
from canyonwave.beamforming import (
    BeamSelection,
    LinkBudget,
    beam_search,
    dbm_to_watts,
    noise_power_dbm,
    su_rate,
)
from canyonwave.hybrid import (
    HybridConfig,
    MultiuserSlot,
    PowerModel,
    SingularChannelError,
    analog_stage,
    energy_efficiency,
    identity_baseband,
    mu_rate,
    quantize_effective,
    zf_precoder,
)
from canyonwave.mapping import (
    CoverageReport,
    RateMap,
    coverage,
    deployment_compare,
    interpolate_map,
    mu_map,
    outage,
    rate_with_outage,
    su_map,
)

__version__ = "0.1.0"
