"""dq-frame admittance identification testbed.

Simulates a droop-controlled grid-forming inverter (and an analytically
known RL reference), perturbs the source voltage, and identifies the
2x2 small-signal admittance seen from the source by three routes: state
space realization of step responses, rational fitting of step spectra,
and swept-sine phasor ratios.
"""

from .errors import (
    AboveNyquist,
    BandOutOfRange,
    DegenerateReference,
    DqadmitError,
    EmptyBaselineWindow,
    EquilibriumNotFound,
    EvaluationAtPole,
    IllConditionedFit,
    ImproperTransferFunction,
    InputNotExciting,
    InvalidParameters,
    LogBranchAmbiguity,
    NonCoherentWindow,
    NotAtEquilibrium,
    NotEnoughData,
    OrderExceedsRank,
    SimulationDiverged,
)
from .admittance import (
    AdmittanceChannel,
    AgreementReport,
    BodeTable,
    ChannelAgreement,
    DqAdmittance,
    StateSpaceEvaluator,
    assemble_sem,
    assemble_sfra,
    bode,
    compare,
)
from .era import (
    ContinuousStateSpace,
    DiscreteStateSpace,
    EraDiagnostics,
    HankelMatrix,
    build_hankel,
    c2d_zoh,
    d2c_zoh,
    era_admittance,
    era_realize,
)
from .experiments import (
    SineInjection,
    StepExperimentPair,
    StepInjection,
    SweepDataset,
    SweepPlan,
    default_sweep_frequencies,
    run_step_pair,
    run_sweep,
    snap_to_coherent_grid,
)
from .plant import (
    GFM_STATE_NAMES,
    MIN_SAMPLE_RATE_HZ,
    RL_STATE_NAMES,
    GfmParameters,
    GridParameters,
    Plant,
    RlParameters,
    SimulationRecord,
    build_gfm_plant,
    build_rl_reference_plant,
    find_equilibrium,
    simulate,
)
from .ratfit import (
    FitOptions,
    FitResult,
    RationalTransferFunction,
    evaluate,
    fit_frequency_domain,
    fit_time_domain,
    simulate_forced_response,
    simulate_step_response,
    zero_transfer_function,
)
from .signals import (
    DqSignal,
    FrequencyResponse,
    Phasor,
    TimeSeries,
    extract_phasor,
    inverse_park,
    nrmse_fit_percent,
    nrmse_percent,
    park,
    remove_dc_offset,
)

__version__ = "0.1.0"
