"""fiberppe: coherent fiber transmission lab with longitudinal power-profile
estimation and hard-decision power-offset analysis."""

from .channel import (
    CalibrationError,
    FiberLink,
    NoiseSpec,
    ReferenceProfile,
    add_awgn,
    n0_for_target_ser,
    reference_profile,
    ssfm_propagate,
)
from .constellation import (
    ConstellationSpec,
    ErrorOutcomeSet,
    ErrorPmf,
    build_qam,
    edge_ser_from_overall,
    error_outcomes,
    error_pmf,
    hard_decide,
    q_function,
    ser_mask,
    ser_mqam,
)
from .estimators import MmsePowerProfileEstimator, OffsetSerRegressor
from .offset import (
    OffsetFit,
    OffsetReport,
    fit_offset_vs_ser,
    ideal_po_removal,
    po_to_db,
    power_offset,
    rms_error,
    span_start_mask,
    virtual_hd_perturbation,
)
from .ppe import (
    IllConditionedError,
    MatrixMemoryError,
    PerturbationMatrix,
    PerturbationVector,
    PowerProfileEstimate,
    build_matrix,
    delta_u,
    dispersion_operator,
    mmse_solve,
    perturbation_column,
)
from .rxdsp import (
    RxBundle,
    align_quadrant,
    cdc,
    cpr,
    matched_filter_downsample,
    measure_ser,
    regenerate_references,
    run_receiver,
)
from .waveform import (
    ShapingConfig,
    SymbolFrame,
    Waveform,
    generate_symbols,
    rrc_shape,
    rrc_taps,
    set_launch_power,
    shape_indices,
)

__version__ = "0.1.0"
