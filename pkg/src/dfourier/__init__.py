"""Fourier-dimension pipeline for coprimality-restricted well-approximable sets."""

from dfourier.analyze import (
    DecayBand,
    DecayReport,
    DirectDensity,
    UpperBoundReport,
    borel_cantelli_report,
    compare_with_window_only,
    decay_report,
    measure_of_Aq,
    pointwise_error_bound,
    predicted_dimension,
    sampling_remainder,
    support_witness_scan,
    support_witnesses,
    transform_samples,
    write_decay_csv,
    write_report_json,
    write_upper_csv,
)
from dfourier.arith import (
    ResidueSet,
    coprime_density,
    grs_bound_ratio,
    ramanujan_period,
    ramanujan_sum,
    residue_count,
    residue_set,
)
from dfourier.bump import BumpSpec
from dfourier.errors import (
    BandwidthBudgetError,
    ProfileError,
    WindowExhaustedError,
)
from dfourier.measure import (
    BuildConfig,
    GmFactor,
    MeasureStage,
    build_measure,
    build_xi_grid,
    gm_series,
    h0_series,
    stability_gap,
)
from dfourier.profile import (
    ApproximationProfile,
    Bucket,
    ScaleSet,
    power_law_profile,
)
from dfourier.series import TruncatedFourierSeries, constant_series, series_multiply

__all__ = [
    "ApproximationProfile",
    "BandwidthBudgetError",
    "Bucket",
    "BuildConfig",
    "BumpSpec",
    "DecayBand",
    "DecayReport",
    "DirectDensity",
    "GmFactor",
    "MeasureStage",
    "ProfileError",
    "ResidueSet",
    "ScaleSet",
    "TruncatedFourierSeries",
    "UpperBoundReport",
    "WindowExhaustedError",
    "borel_cantelli_report",
    "build_measure",
    "build_xi_grid",
    "compare_with_window_only",
    "coprime_density",
    "decay_report",
    "gm_series",
    "grs_bound_ratio",
    "h0_series",
    "measure_of_Aq",
    "pointwise_error_bound",
    "power_law_profile",
    "predicted_dimension",
    "ramanujan_period",
    "ramanujan_sum",
    "residue_count",
    "residue_set",
    "sampling_remainder",
    "constant_series",
    "series_multiply",
    "stability_gap",
    "support_witness_scan",
    "support_witnesses",
    "transform_samples",
    "write_decay_csv",
    "write_report_json",
    "write_upper_csv",
]

__version__ = "0.1.0"
