"""Plane-wave ultrasound beamforming toolkit.

Synthetic phantoms, DAS/MVDR references, a capsule-network beamformer
with weight-free dynamic routing, lookahead kernel pruning, a 16-bit
fixed-point inference path, and a transaction/cycle model of the
streaming accelerator, all desk-verifiable on synthetic data.
"""

__version__ = "0.1.0"

from .data_model import (  # noqa: F401
    EnvelopeImage,
    PixelGrid,
    ProbeGeometry,
    RfVolume,
    Tensor,
    WeightBundle,
    count_flops,
    count_params,
    read_bundle_file,
    read_tensor_file,
    write_bundle_file,
    write_tensor_file,
)
from .errors import ToolError  # noqa: F401
