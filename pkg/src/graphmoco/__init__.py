"""Binary-function similarity toolkit: three-level CFG encoders fine-tuned
with momentum contrast, plus corpus tooling, search, and evaluation."""

from .config import TrainConfig
from .corpus import (
    ACFG,
    BasicBlock,
    Corpus,
    FunctionVariant,
    RawInstruction,
    load_corpus,
    sample_positive_pair,
    save_corpus,
    split_corpus,
    synth_corpus,
)
from .normalizer import (
    NormalizedInstruction,
    Vocab,
    build_vocab,
    encode_instruction,
    normalize_instruction,
)
from .token_embed import TokenEmbeddingTable, embed_instruction, init_tables
from .block_encoder import StrandCNN, encode_block, init_strand_params
from .graph_encoder import (
    FunctionEmbedding,
    FunctionEncoder,
    GraphEncoder,
    build_function_encoder,
    encode_batch,
    encode_function,
    encode_graph,
)
from .trainer import (
    EmbeddingQueue,
    EncoderPair,
    enqueue_dequeue,
    info_nce_loss,
    init_queue,
    momentum_update,
    preshuffle,
    train,
    train_step,
    triplet_loss,
    unshuffle,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import (
    PairTask,
    QueryRanking,
    RankingResult,
    auc_roc,
    average_precision,
    build_pair_task,
    build_search_task,
    cosine_sim,
    mean_ap,
    mrr_at_k,
    recall_at_1,
    run_search_eval,
)
from .index import EmbeddingIndex, build_index, load_index, query_index, save_index
from .cli import cli_main

__version__ = "0.1.0"
