"""Measure-masked piano accompaniment modeling and evaluation toolkit."""

from .score import (
    ALLOWED_MEASURE_TICKS,
    MeasureMap,
    Note,
    Score,
    SmfParseError,
    Track,
    parse_smf,
    slice_measures,
    write_smf,
)
from .codec import (
    MaskSpec,
    TokenSequence,
    TrainingExample,
    Vocabulary,
    VOCAB,
    build_target,
    decode,
    encode_prompt,
    make_accompaniment_prompt,
    make_training_example,
)
from .model import (
    Checkpoint,
    ModelConfig,
    SeqModel,
    TrainPlan,
    finetune,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .sampling import SamplerConfig, generate, generate_accompaniment, generate_many
from .metrics import checkpoint_curves, kl_divergence, note_density, note_f1, pche, phe
from .corpus import SongEntry, leave_one_out, load_dataset, make_split
from .experiment import (
    ExperimentStore,
    Response,
    SampleRecord,
    Trial,
    binomial_test,
    build_pairs,
    export_results,
    tally_errors,
)

__version__ = "0.1.0"
