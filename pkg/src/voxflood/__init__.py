"""voxflood: volumetric instance segmentation that adapts a prompt-driven 2D
slice segmenter to 3D via orthogonal slice stacks and scales to arbitrary
object sizes with a flood-filling tile scheduler."""

from .adapter import AdapterConfig, MergeRule, TileProposal, merge_stacks, segment_tile
from .evaluation import CorrelationMatrix, best_diagonal_mean_iou, correlation_matrix, dice_loss, iou
from .ops import StructuringElement
from .phantoms import PhantomSpec, classical_reference, generate
from .scheduler import SchedulerConfig, run_all, run_segment
from .segmenter import (
    ChannelStrategy,
    DensePrompt,
    MaskChannel,
    OracleFloodSegmenter,
    PointPrompt,
    SegmenterRequest,
    SegmenterResponse,
    mask_from_logits,
    select_channel,
)
from .volume import (
    Axis,
    LabelVolume,
    Region3D,
    Slice2D,
    VoxelVolume,
    enframe,
    extract_centered_slice,
    extract_tile,
    normalize_slice,
)

__version__ = "0.1.0"
