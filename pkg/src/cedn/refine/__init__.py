from .annotation import (
    BACKGROUND,
    UNCERTAIN,
    Instance,
    InstanceAnnotation,
    add_uncertain_band,
    labelmap_to_contours,
    load_annotation,
    save_annotation,
)
from .crf import (
    CrfParams,
    MeanFieldResult,
    PairwiseKernel,
    build_unary,
    flip_threshold,
    meanfield_infer,
    potts_energy,
    refine_annotation,
    unary_from_labels,
)
