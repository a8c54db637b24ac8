"""Low-complexity ZF and MMSE equalization for OTFS with rectangular waveforms.

The effective delay-Doppler channel of a rectangular-pulse OTFS link is block
circulant.  Transforming its blocks with N-point FFTs reduces ZF and MMSE
equalization to N independent M x M problems, and the tap-delay structure of
those blocks admits a sparse LU factorization.
"""

from .accounting import DENSE_LIMIT, OpCounter, counting, forbid_dense
from .channel import (
    DelayProfile,
    EffectiveChannel,
    MismatchChannel,
    PathRealization,
    TimeVaryingChannel,
    build_time_domain,
    draw_realization,
    export_channel,
    heff_ideal_mismatch,
    heff_rect_direct,
    heff_rect_theorem1,
    import_channel,
    vehicular_b,
)
from .equalizers import (
    direct_mmse_oracle,
    direct_zf_oracle,
    ideal_apply,
    ideal_mmse_build,
    ideal_zf_build,
    mmse_apply,
    mmse_build,
    zf_apply,
    zf_build,
)
from .errors import DenseSizeError, DimensionError, ProfileError, SingularMatrixError
from .modem_sim import BerRecord, QamConstellation, SimConfig, complexity_report, run_ber_sweep
from .struct_linalg import DelayPattern, block_circ_inverse, dense_inverse_oracle, structured_invert, structured_lu
from .transforms import (
    DdFrame,
    DdGrid,
    MatrixSequence,
    TfFrame,
    block_circ_assemble,
    block_diagonalize,
    devectorize,
    fft_mtx,
    ifft_mtx,
    isfft,
    sfft,
    vectorize,
)

__version__ = "0.1.0"
