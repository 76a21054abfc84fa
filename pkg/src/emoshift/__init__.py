"""Text-guided image sentiment transfer through an emotion latent space.

The library trains eight per-emotion codebooks of latent vectors against
real image features with an adversarial objective, then conditions a
token-fusion transfer network on sampled codebook entries plus a sentiment
word to restyle images, and ships the full evaluation battery (Acc-8/Acc-2,
SSIM, reconstructed error, FID).
"""

from emoshift.config import RunConfig, load_run_config
from emoshift.dataset import (
    EMOTIONS,
    DatasetSplit,
    EmotionLabel,
    ImageRecord,
    generate_toy_dataset,
    load_image,
    load_manifest,
    make_splits,
    save_image,
    write_manifest,
)
from emoshift.encoders import EncoderConfig, embed_text, encode_image
from emoshift.graph import (
    EmotionGraph,
    GCNEncoder,
    build_stage1_graph,
    build_stage2_graph,
    encode_graph,
    inject_emotion_semantics,
)
from emoshift.losses import LossReport, LossWeights, total_loss
from emoshift.metrics import EvalReport, accuracy2, accuracy8, fid, recon_error, ssim
from emoshift.space import (
    EmoLatSpace,
    SpaceTrainConfig,
    SpaceTrainer,
    export_space,
    import_space,
    mdi_loss,
    quantize,
    sample_emotion_feature,
)
from emoshift.transfer import (
    TransferConfig,
    TransferModel,
    TransferTrainer,
    resolve_emotion_word,
    transfer,
)

__all__ = [
    "EMOTIONS",
    "DatasetSplit",
    "EmoLatSpace",
    "EmotionGraph",
    "EmotionLabel",
    "EncoderConfig",
    "EvalReport",
    "GCNEncoder",
    "ImageRecord",
    "LossReport",
    "LossWeights",
    "RunConfig",
    "SpaceTrainConfig",
    "SpaceTrainer",
    "TransferConfig",
    "TransferModel",
    "TransferTrainer",
    "accuracy2",
    "accuracy8",
    "build_stage1_graph",
    "build_stage2_graph",
    "embed_text",
    "encode_graph",
    "encode_image",
    "export_space",
    "fid",
    "generate_toy_dataset",
    "import_space",
    "inject_emotion_semantics",
    "load_image",
    "load_manifest",
    "load_run_config",
    "make_splits",
    "mdi_loss",
    "quantize",
    "recon_error",
    "resolve_emotion_word",
    "sample_emotion_feature",
    "save_image",
    "ssim",
    "total_loss",
    "transfer",
    "write_manifest",
]

__version__ = "0.1.0"
