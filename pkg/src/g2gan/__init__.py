"""Multi-domain unpaired image-to-image translation.

A pair of generators (translate, then reconstruct) trained against a single
patch discriminator with an auxiliary domain classifier, with configurable
parameter sharing between the two generators.
"""

from .errors import (
    ConfigError,
    DatasetError,
    EvalError,
    G2GanError,
    LabelError,
    NumericsError,
    ShapeError,
)
from .data import (
    DomainDataset,
    DomainLabel,
    denormalize,
    encode_label,
    export_dataset,
    load_domain_folders,
    normalize,
    rotate_hue,
    sample_unpaired,
    synthesize_multidomain,
)
from .losses import (
    ObjectiveWeights,
    SsimParams,
    classification_loss,
    color_cycle,
    cycle_l1,
    full_objective,
    identity_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    ms_ssim,
    ms_ssim_loss,
    ssim,
    ssim_loss,
)
from .networks import (
    Discriminator,
    Generator,
    GeneratorPair,
    SharingMode,
    build_discriminator,
    build_generator_pair,
    count_parameters,
    discriminate,
    init_weights,
    load_checkpoint,
    save_checkpoint,
    translate,
)
from .trainer import (
    ImageBuffer,
    TrainConfig,
    TrainState,
    create_train_state,
    double_discriminator_step,
    fit,
    lr_at_epoch,
    train_step,
)
from .evaluation import (
    EvalClassifier,
    EvalTrainConfig,
    FeatureEmbedder,
    capacity_report,
    classification_accuracy,
    classifier_embedder,
    evaluate_translation,
    fid,
    fid_from_moments,
    train_eval_classifier,
)

__version__ = "0.1.0"
