"""sketchparam: parametric CAD sketch inference from raster images.

Sketches are sets of up to 16 typed primitives (lines, circles, arcs,
points) tokenized over a 73-symbol vocabulary. A differentiable renderer
network turns token probabilities into images, which lets the image-to-token
parameterizer network pretrain from renders alone; labeled fine-tuning uses
optimal slot matching.
"""

from .primitives import Primitive, Sketch, normalize_sketch
from .tokens import TokenGrid, detokenize, dequantize, one_hot, quantize, tokenize
from .datasets import parse_dataset, serialize_dataset
from .raster import (
    HanddrawConfig,
    build_pyramid,
    circumcircle,
    rasterize,
    read_pgm,
    synthesize_handdrawn,
    write_pgm,
)
from .synthgen import GeneratorConfig, build_corpus, rng_stream, sample_sketch
from .autodiff import ParameterStore, Tape, Tensor, adam_step, backward, grad_check
from .nets import (
    ParameterizerConfig,
    RendererConfig,
    SketchParameterizer,
    SketchRenderer,
    image_loss,
    load_checkpoint,
    multiscale_l2,
    save_checkpoint,
    spn_forward,
    srn_forward,
    token_cross_entropy,
)
from .matching import (
    Assignment,
    MetricReport,
    brute_force_assignment,
    cost_matrix,
    hungarian,
    metric_acc,
    metric_chamfer,
    metric_img_mse,
    metric_param_mse,
)

__version__ = "0.1.0"
