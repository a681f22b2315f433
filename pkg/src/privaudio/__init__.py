"""Private audio delivery in reverberant rooms.

Loudspeaker drive signals are designed so that intended messages are
reproduced at chosen listening spots and masked by noise everywhere else.
"""

__version__ = "0.1.0"

from .channel import (
    ChannelOperator,
    ChannelSet,
    MccsOperator,
    NoiseBank,
    adjoint_H,
    adjoint_HN,
    apply_H,
    apply_HN,
    check_mccs_condition,
    check_nullspace_conditions,
)
from .metrics import StoiConfig, relative_error, snr_db, stoi
from .room import Point, RoomScene, deconvolve_rir, generate_ess, image_sources, simulate_rir
from .signal import ProblemDims, Signal, fft_convolve, power, resample
from .solvers import SolveReport, cgls, least_norm_carrier, row_space_residual
from .synthesis import (
    MccsDesign,
    MessageSet,
    NullspaceDesign,
    design_mccs,
    design_nullspace,
    dropout,
    normalize_power,
    perturb_channels,
    render_at,
)
