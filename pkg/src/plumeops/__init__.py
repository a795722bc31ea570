"""Physics-inspired feature operators for infrared plume imagery."""

from .analysis import (
    ErfMap,
    GradCheckReport,
    contribution_ratio,
    erf_map,
    finite_diff_grad,
    grad_check,
)
from .edges import (
    AgpeoParams,
    DirectionalBank,
    EdgePyramid,
    GaborBank,
    agpeo,
    build_pyramid,
    directional_gradient,
    laplacian_edge,
    phase_congruency,
    sobel_edge,
)
from .gas_block import (
    GasBlockParams,
    GasBlockTrace,
    edge_gate,
    gas_block_forward,
    global_branch,
    local_branch,
    project_split,
)
from .io import RunConfig, parse_run_config, read_pgm, read_tensor, write_pgm, write_tensor
from .rng import Prng
from .routing import (
    AimmConstants,
    FeaturePyramid,
    ImportanceParams,
    PathWeights,
    RoutingParams,
    aimm_fuse,
    aimm_self,
    casr_pan_forward,
    importance_map,
    path_weights,
    transport_blend,
    velocity_surrogate,
)
from .spectral import (
    CflError,
    DiffusionParams,
    FrequencyGrid,
    SpectralField,
    dct2,
    decay_apply,
    fd_step,
    freq_grid,
    gaussian_bump,
    idct2,
    spectral_solve,
)
from .tensor import (
    KernelWeights,
    Parameter,
    ShapeError,
    TapeNode,
    Tensor,
    backward,
    conv2d,
    elementwise,
    maxpool2,
    precision64,
    reduce,
    upsample_nearest,
    vjp,
)

__version__ = "0.1.0"
