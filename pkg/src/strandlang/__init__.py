"""Strand-based hairstyle representation and autoregressive strand language.

The pipeline, bottom to top:

- ``hair``     core geometric types, scalp UV parameterization, the ``.hair``
               binary format and plain-text config files
- ``spectral`` DCT machinery and the bijective backbone/residual decomposition
- ``guides``   frequency-space clustering and guide-strand extraction
- ``quantize`` discrete tokenizers (UV grid, 4-head product quantization,
               density patches, density anchor)
- ``grammar``  the token vocabulary, sequence serializer, validating parser
               and loss masks
- ``model``    desk-scale decoder-only transformer: training and phased
               sampling over the strand language
- ``synth``    procedural synthetic hairstyles with known ground truth
- ``dense``    guide-to-dense interpolation and OBJ export
- ``profiles`` named constant bundles (``paper`` and ``test``)
"""

from strandlang.hair import (
    DensityMap,
    Hairstyle,
    RegionPartition,
    ScalpManifold,
    Strand,
    UVCoord,
    assign_region,
    project_root_to_uv,
    rasterize_density,
    read_hair,
    resample_strand,
    write_hair,
)
from strandlang.spectral import (
    CoarseBackbone,
    FrameSequence,
    StyleResidual,
    compute_frames,
    dct_forward,
    dct_inverse,
    decompose,
    extract_coarse_backbone,
    recompose,
)
from strandlang.guides import (
    Clustering,
    GuideSet,
    extract_guides,
    kmeans,
    sample_cluster_strands,
    strand_descriptor,
)
from strandlang.quantize import (
    Codebook,
    DensityCodebook,
    decode_density,
    decode_strand,
    density_anchor,
    dequantize_uv,
    encode_density,
    encode_strand,
    quantize_uv,
    strand_to_feature,
    train_density_codebook,
    train_pq_codebook,
)
from strandlang.grammar import (
    LossMask,
    Mode,
    ParseError,
    ParseErrorCode,
    StrandTokens,
    TokenSequence,
    Vocabulary,
    build_loss_mask,
    build_vocabulary,
    parse,
    serialize,
)
from strandlang.model import (
    Checkpoint,
    ConditionSet,
    DecodeConfig,
    ModelConfig,
    TrainConfig,
    gradient_check,
    sample_phased,
    resample_style,
    train,
)
from strandlang.synth import StyleFamily, generate_hairstyle
from strandlang.dense import export_obj, interpolate_dense
from strandlang.profiles import PAPER, TEST, get_profile

__version__ = "0.1.0"
