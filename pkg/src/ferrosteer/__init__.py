"""Magnetic steering of ferrofluid marbles: field model, control allocation,
closed-loop simulation and scenario tooling."""

from .config import ScenarioConfig, carry_config, default_config, two_fm_config
from .control import (
    ActuationCommand,
    ControllerGains,
    SetupConfig,
    SetupKind,
    control_step,
    invert_setup1,
    invert_setup2,
    invert_setup3,
    invert_two_fm,
)
from .dynamics import MarbleParams, MarbleState, Plant, step
from .errors import (
    AllocationSingularError,
    ConfigError,
    FerroSteerError,
    IntegrationDivergedError,
    NoAuthorityError,
    SaturationError,
    ScenarioFailed,
    SingularityError,
)
from .harness import (
    Metrics,
    calibrate_chiv,
    compare_setups,
    frequency_sweep,
    run_carry,
    run_scenario,
    run_two_fm,
    simulate,
)
from .magnetics import (
    HelmholtzCoil,
    MagneticEnvironment,
    MagnetSource,
    axial_force,
    dipole_flux,
    dipole_flux_gradient,
    field_force,
)

__version__ = "0.1.0"
