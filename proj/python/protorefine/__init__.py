"""Prototype-guided refinement of coarse patch annotations.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports its surface.
"""

from ._core import (  # noqa: F401
    AblationToggles,
    Aggregation,
    Assignment,
    ClassifierHead,
    ConfigError,
    ConfusionMatrix,
    DataError,
    FrequencyStats,
    LabelEntry,
    LabelTable,
    MajorRule,
    MajorSelection,
    PatchRecord,
    PipelineResult,
    PrototypeLevel,
    PrototypeSet,
    RefineConfig,
    SlideDataset,
    SlideOutcome,
    SynthSlide,
    SynthSpec,
    TrainRecord,
    aggregate_global_prototypes,
    assign_all,
    assign_pseudo_labels,
    assign_to_prototype,
    compute_metrics,
    confusion_matrix,
    cosine_similarity,
    evaluate_tables,
    extract_local_prototypes,
    focal_loss,
    generate_cohort,
    generate_slide,
    kmeans_fit,
    load_head,
    load_label_table,
    load_prototypes,
    load_slide,
    pattern_means,
    predict_labels,
    predict_proba,
    prototype_frequencies,
    refinetune,
    run_pipeline,
    save_head,
    save_label_table,
    save_prototypes,
    save_slide,
    select_major_prototypes,
    similarity_vector,
    slide_from_arrays,
    train_dynamic,
)

__version__ = "0.1.0"
