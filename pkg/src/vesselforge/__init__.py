"""Instruction-driven vessel segmentation corruption and refinement toolkit."""

__version__ = "0.1.0"

from .volume import (  # noqa: F401
    BinaryMask,
    LabelVolume,
    StructuringElement,
    connected_components,
    dilate,
    distance_transform,
    erode,
    load_volume,
    save_volume,
    surface_points,
)
from .centerline import (  # noqa: F401
    Centerline,
    estimate_radius,
    local_tangent,
    refine_centerline,
    select_span,
    skeletonize,
    span_mask,
)
from .corruption import (  # noqa: F401
    CorruptionConfig,
    EditRecord,
    SampleTuple,
    apply_error,
    partition_instructions,
    sample_error,
    synthesize_dataset,
)
from .instruction import (  # noqa: F401
    EditCommand,
    InstructionDoc,
    invert_record,
    parse_instruction,
    render_instruction,
)
from .refine import RefinementSession, apply_command, refine_step, replay  # noqa: F401
from .metrics import MetricsReport, chamfer, dice, evaluate, f1_scores, nsd  # noqa: F401
