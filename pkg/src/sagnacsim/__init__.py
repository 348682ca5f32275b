"""Simulation and characterization of Sagnac-SPDC polarization-entangled photon sources."""

__version__ = "0.1.0"

from .states import (bell_state, bell_density, density_from_ket, hermitize_and_project, purity,
                     fidelity, concurrence, trace_distance, werner, maximally_mixed, StateMetrics,
                     state_metrics)
from .measurement import (AnalyzerSetting, CoincidenceRecord, CorrelationCurve, projector,
                          coincidence_probability, predicted_rate, simulate_record,
                          visibility_minmax, visibility_fit)
from .chsh import ChshAngleSet, CANONICAL, correlation_E, chsh_S, chsh_sigma_montecarlo, ideal_S
from .tomography import standard_set, linear_inversion, ml_reconstruct, tomography_report
from .source import (SourceParams, source_state, analytic_visibilities,
                     fit_source_to_visibilities, coupling_ratio, single_mode_bandwidth,
                     brightness_report)
