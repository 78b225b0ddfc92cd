"""Collisional decoherence of an immobile multichannel system in a thermal gas.

Monitoring-approach generators on finite models, s-wave multichannel
scattering, thermally averaged rate tensors, the channel-basis master
equation and its quantum-jump unravelling.
"""

from .dynamics import (
    AssembledGenerator,
    DensityMatrix,
    IntegrationError,
    TrajectoryRecord,
    assemble,
    coherence_phase_rate,
    fit_phase_rate,
    population_rate_matrix,
    propagate,
)
from .jumps import EnsembleConfig, JumpOperatorSet, ensemble_average, lindblad_operators, simulate_trajectory
from .monitoring import CollisionModel, build_generator, finite_dt_map, measurement_maps
from .operators import CompositeSpace, Superoperator, choi_matrix, choi_negativity
from .scattering import AmplitudeTable, ChannelSet, SWaveKMatrixModel
from .thermal import (
    EnergyShifts,
    GasParameters,
    QuadratureConfig,
    QuadratureError,
    RateTensor,
    elastic_dephasing_rate,
    energy_shift,
    energy_shifts,
    rate_coefficient,
    rate_tensor,
)

__version__ = "0.1.0"
