"""Needle-vibration passband energy, a speckle phantom and a two-phase probe aligner."""

from .controller import (
    CONVERGED,
    MAX_ITERATIONS,
    ControllerAbort,
    ControllerConfig,
    RestorationResult,
    TrajectoryRow,
    determine_direction,
    eliminate_misalignment,
    run_alignment,
)
from .errors import AcquisitionError, ConfigurationError, InputError, VibalignError
from .phantom import (
    FrameSequence,
    Mode,
    PhantomConfig,
    ProbeState,
    generate_sequence,
    ground_truth_energy,
    needle_visibility,
    render_frame,
)
from .spectral import (
    BandpassSpec,
    EnergyMap,
    EnergyMetric,
    average_energy,
    bandpass_filter_pixel,
    energy_map,
    heatmap_for_display,
    pixel_energy,
)

__version__ = "0.1.0"
