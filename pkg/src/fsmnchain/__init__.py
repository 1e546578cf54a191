"""Desk-scale CNN + pyramidal-FSMN acoustic modeling toolkit.

Hand-derived tensor kernels, sequence graphs with exact forward-backward,
joint sequence + cross-entropy training on synthetic corpora, Viterbi and
n-best decoding, and LM rescoring.
"""

from .corpus import (
    GeneratorSpec,
    Utterance,
    desk_corpus,
    desk_generator_spec,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .decoding import Hypothesis, nbest, viterbi
from .errors import (
    ConfigurationError,
    EmptyGraphError,
    FormatError,
    FsmnChainError,
    GraphError,
    InfeasibleGraphError,
    NumeratorInfeasibleError,
    TooManyPathsError,
    TrainingDivergedError,
)
from .estimator import PyramidalFsmnRecognizer
from .gradcheck import GradCheckReport, grad_check
from .graphs import (
    Graph,
    Path,
    PhoneLm,
    build_denominator_graph,
    build_numerator_graph,
    build_phone_hmm,
    denominator_rolled,
    enumerate_paths,
    read_graph_text,
    trim,
    unroll_to_frames,
    write_graph_text,
)
from .lm import NGramScorer, OraclePenaltyLm, TinyRnnLm, perplexity, train_tiny_rnnlm
from .loss import (
    JointLossReport,
    LossReport,
    Occupancy,
    ce_loss,
    forward_backward,
    joint_loss,
    l2_penalty,
    lfmmi_loss,
)
from .network import (
    BlockConfig,
    ConvLayerConfig,
    FrontEndConfig,
    MemoryBlockSpec,
    Network,
    NetworkConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    desk_config,
    load_checkpoint,
    flagship_config,
    param_count,
    preset_config,
    receptive_field,
    save_checkpoint,
    skip_sources,
)
from .rescoring import (
    oracle_accuracy,
    phone_error_rate,
    rescore,
    sweep_lm_weight,
    top1_accuracy,
)
from .rng import Rng
from .tensor import Tensor, read_tensor, tensor_bytes, write_tensor
from .training import (
    EvalMetrics,
    TrainConfig,
    TrainResult,
    alpha_ablation,
    evaluate,
    format_ablation_table,
    levenshtein,
    train,
)
from .verification import run_gradient_suite

__version__ = "0.1.0"
