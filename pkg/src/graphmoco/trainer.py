"""Momentum-contrast training: siamese query/key encoders, a FIFO queue of
key embeddings as negatives, InfoNCE with temperature, momentum updates of
the key side, and key-batch preshuffling.

Only the query encoder ever receives gradients; the key encoder follows it
through the convex momentum update and its outputs enter the loss detached.
"""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import Corpus, FunctionVariant, eligible_training_ids, sample_positive_pair
from .graph_encoder import FunctionEncoder, build_function_encoder
from .packing import VariantIds, encode_variant_ids
from .normalizer import Vocab, build_vocab

logger = logging.getLogger("graphmoco.trainer")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; training state is not trustworthy."""


# ---------------------------------------------------------------------------
# Encoder pair
# ---------------------------------------------------------------------------


@dataclass
class EncoderPair:
    """Query and key encoders of identical shape; key starts as an exact copy."""

    query: FunctionEncoder
    key: FunctionEncoder

    @classmethod
    def create(cls, query: FunctionEncoder) -> "EncoderPair":
        key = copy.deepcopy(query)
        key.load_state_dict(query.state_dict())
        for p in key.parameters():
            p.requires_grad_(False)
        return cls(query=query, key=key)

    def query_params(self) -> dict[str, torch.Tensor]:
        return dict(self.query.named_parameters())

    def key_params(self) -> dict[str, torch.Tensor]:
        return dict(self.key.named_parameters())

    def momentum_update(self, m: float) -> None:
        momentum_update(self.key_params(), self.query_params(), m)


def momentum_update(
    theta_k: dict[str, torch.Tensor], theta_q: dict[str, torch.Tensor], m: float
) -> dict[str, torch.Tensor]:
    """theta_k <- m * theta_k + (1 - m) * theta_q, componentwise and in place."""
    if not 0 <= m < 1:
        raise ValueError("momentum must be in [0, 1)")
    if theta_k.keys() != theta_q.keys():
        raise ValueError("parameter name sets differ between key and query")
    with torch.no_grad():
        for name, tk in theta_k.items():
            tq = theta_q[name]
            if tk.shape != tq.shape:
                raise ValueError(f"shape mismatch for {name}: {tk.shape} vs {tq.shape}")
            tk.mul_(m).add_(tq, alpha=1.0 - m)
    return theta_k


# ---------------------------------------------------------------------------
# Embedding queue
# ---------------------------------------------------------------------------


class EmbeddingQueue:
    """Fixed-capacity FIFO of unit-norm key embeddings.

    ``head`` indexes the oldest row; enqueueing N rows overwrites the oldest
    N in place, so capacity is invariant after initialization.
    """

    def __init__(self, buffer: torch.Tensor, function_ids: Optional[list[str]] = None):
        if buffer.ndim != 2:
            raise ValueError("queue buffer must be (K, dim)")
        self.buffer = buffer
        self.head = 0
        self.function_ids: list[Optional[str]] = (
            list(function_ids) if function_ids is not None else [None] * buffer.shape[0]
        )
        if len(self.function_ids) != buffer.shape[0]:
            raise ValueError("function_ids must parallel the buffer rows")

    @property
    def capacity(self) -> int:
        return int(self.buffer.shape[0])

    def snapshot(self) -> torch.Tensor:
        """Rows in age order, oldest first."""
        return torch.roll(self.buffer, shifts=-self.head, dims=0)

    def enqueue_dequeue(
        self, k_batch: torch.Tensor, function_ids: Optional[Sequence[str]] = None
    ) -> "EmbeddingQueue":
        n = k_batch.shape[0]
        if n > self.capacity:
            raise ValueError(f"cannot enqueue {n} rows into a queue of {self.capacity}")
        rows = (torch.arange(n) + self.head) % self.capacity
        self.buffer[rows] = k_batch.detach().to(self.buffer.dtype)
        for i, r in enumerate(rows.tolist()):
            self.function_ids[r] = function_ids[i] if function_ids is not None else None
        self.head = (self.head + n) % self.capacity
        return self


def enqueue_dequeue(
    queue: EmbeddingQueue,
    k_batch: torch.Tensor,
    function_ids: Optional[Sequence[str]] = None,
) -> EmbeddingQueue:
    """Replace the N oldest queue rows with a fresh key batch (FIFO)."""
    return queue.enqueue_dequeue(k_batch, function_ids)


def init_queue(
    corpus: Corpus, key_encoder: FunctionEncoder, k: int, seed: int
) -> EmbeddingQueue:
    """Fill a fresh queue with key encodings of K sampled variants.

    Samples without replacement when the corpus is large enough, with
    replacement otherwise; deterministic given the seed.
    """
    if not corpus.variants:
        raise ValueError("cannot initialize a queue from an empty corpus")
    rng = random.Random(seed)
    n = len(corpus.variants)
    if n >= k:
        indices = rng.sample(range(n), k)
    else:
        indices = [rng.randrange(n) for _ in range(k)]
    variants = [corpus.variants[i] for i in indices]
    rows = []
    with torch.no_grad():
        for start in range(0, len(variants), 64):
            chunk = variants[start : start + 64]
            rows.append(key_encoder(key_encoder.pack(chunk)))
    buffer = torch.cat(rows, dim=0)
    return EmbeddingQueue(buffer, function_ids=[v.function_id for v in variants])


# ---------------------------------------------------------------------------
# Preshuffle
# ---------------------------------------------------------------------------


def preshuffle(batch: Sequence, rng: random.Random) -> tuple[list, tuple[int, ...]]:
    """Reorder a key batch by a uniform random permutation, returning both.

    The permutation is an explicit value carried through the step so the key
    embeddings can be restored to query order after encoding.
    """
    if not batch:
        raise ValueError("cannot shuffle an empty batch")
    perm = list(range(len(batch)))
    rng.shuffle(perm)
    return [batch[p] for p in perm], tuple(perm)


def unshuffle(embeddings: torch.Tensor, perm: Sequence[int]) -> torch.Tensor:
    """Undo preshuffle: row i of the result is the embedding of original sample i."""
    if embeddings.shape[0] != len(perm):
        raise ValueError(
            f"permutation of length {len(perm)} cannot unshuffle {embeddings.shape[0]} rows"
        )
    out = torch.empty_like(embeddings)
    out[torch.as_tensor(perm, dtype=torch.long)] = embeddings
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def info_nce_loss(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    queue: torch.Tensor | EmbeddingQueue,
    tau: float,
    exclude: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Instance-discrimination cross entropy.

    Per query the positive logit (its matching key) sits at index 0 and every
    queue row is a negative.  ``exclude`` optionally masks queue columns per
    query (True = drop that negative).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    negatives = queue.buffer if isinstance(queue, EmbeddingQueue) else queue
    if not (torch.isfinite(q).all() and torch.isfinite(k_pos).all() and torch.isfinite(negatives).all()):
        raise ValueError("non-finite inputs to the contrastive loss")
    l_pos = (q * k_pos).sum(dim=1, keepdim=True)
    l_neg = q @ negatives.to(q.dtype).T
    if exclude is not None:
        l_neg = l_neg.masked_fill(exclude, float("-inf"))
    logits = torch.cat([l_pos, l_neg], dim=1) / tau
    targets = torch.zeros(q.shape[0], dtype=torch.long, device=q.device)
    return torch.nn.functional.cross_entropy(logits, targets)


def triplet_loss(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    queue: torch.Tensor | EmbeddingQueue,
    margin: float = 0.5,
) -> torch.Tensor:
    """Hinge on cosine similarity against the hardest queue negative."""
    negatives = queue.buffer if isinstance(queue, EmbeddingQueue) else queue
    sim_pos = (q * k_pos).sum(dim=1)
    sim_neg = (q @ negatives.to(q.dtype).T).max(dim=1).values
    return torch.relu(margin - sim_pos + sim_neg).mean()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class _IdsCache:
    """Per-run memo of normalized/encoded variants keyed by full variant key."""

    def __init__(self, vocab: Vocab, address_pattern):
        self.vocab = vocab
        self.address_pattern = address_pattern
        self._store: dict[tuple, VariantIds] = {}

    def get(self, variant: FunctionVariant) -> VariantIds:
        ids = self._store.get(variant.key)
        if ids is None:
            ids = encode_variant_ids(variant, self.vocab, self.address_pattern)
            self._store[variant.key] = ids
        return ids

    def pack(self, encoder: FunctionEncoder, variants: list[FunctionVariant]):
        return encoder.pack_ids([self.get(v) for v in variants])


def train_step(
    pair: EncoderPair,
    function_ids: Sequence[str],
    corpus: Corpus,
    queue: EmbeddingQueue,
    config: TrainConfig,
    rng: random.Random,
    optimizer: torch.optim.Optimizer,
    ids_cache: Optional[_IdsCache] = None,
) -> tuple[float, EncoderPair, EmbeddingQueue]:
    """One full loop body: sample pairs, encode both sides, InfoNCE, update.

    Gradients reach only the query encoder; the key encoder is advanced by the
    momentum rule afterwards and its batch is pushed into the queue.
    """
    cache = ids_cache or _IdsCache(pair.query.vocab, pair.query.address_pattern)
    queries: list[FunctionVariant] = []
    keys: list[FunctionVariant] = []
    for fid in function_ids:
        a, b = sample_positive_pair(corpus, fid, rng, config.allow_self_pairs)
        queries.append(a)
        keys.append(b)

    if config.preshuffle:
        shuffled_keys, perm = preshuffle(keys, rng)
    else:
        shuffled_keys, perm = list(keys), tuple(range(len(keys)))

    q_emb = pair.query(cache.pack(pair.query, queries))
    with torch.no_grad():
        k_emb = pair.key(cache.pack(pair.key, shuffled_keys))
    k_emb = unshuffle(k_emb, perm)

    if config.loss == "triplet":
        loss = triplet_loss(q_emb, k_emb, queue, config.triplet_margin)
    else:
        exclude = None
        if config.mask_same_function:
            exclude = torch.tensor(
                [
                    [qid is not None and qid == v.function_id for qid in queue.function_ids]
                    for v in queries
                ],
                dtype=torch.bool,
            )
        loss = info_nce_loss(q_emb, k_emb, queue, config.tau, exclude=exclude)

    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss.item()!r}; aborting")

    optimizer.zero_grad()
    loss.backward()
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(pair.query.parameters(), config.grad_clip)
    optimizer.step()
    pair.momentum_update(config.momentum)
    queue.enqueue_dequeue(k_emb, [v.function_id for v in keys])
    return float(loss.item()), pair, queue


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    pair: EncoderPair
    queue: EmbeddingQueue
    history: list[dict] = field(default_factory=list)


def train(
    corpus: Corpus,
    config: TrainConfig,
    val_corpus: Optional[Corpus] = None,
    out_dir: Optional[str | Path] = None,
    vocab: Optional[Vocab] = None,
    encoder_factory: Optional[Callable[[Vocab, TrainConfig], FunctionEncoder]] = None,
) -> TrainResult:
    """Run the full training loop and return the final state.

    Writes per-epoch checkpoints under ``out_dir`` when given (gated by
    ``config.checkpoint_every``; 0 keeps only the implicit final state).
    """
    ids = eligible_training_ids(corpus, config.allow_self_pairs)
    if not ids:
        raise ValueError("no function groups eligible for positive-pair sampling")

    if vocab is None:
        vocab = build_vocab(corpus, config.address_pattern)
    if encoder_factory is None:
        query = _default_encoder(vocab, config)
    else:
        query = encoder_factory(vocab, config)
    pair = EncoderPair.create(query)
    queue = init_queue(corpus, pair.key, config.queue_size, config.seed + 1)
    optimizer = torch.optim.Adam(
        pair.query.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    pair_rng = random.Random(config.seed + 2)
    batch_rng = random.Random(config.seed + 3)
    cache = _IdsCache(vocab, config.address_pattern)

    history: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = list(ids)
        batch_rng.shuffle(order)
        batches = _make_batches(order, config.batch_size)
        losses = []
        for batch in batches:
            loss, pair, queue = train_step(
                pair, batch, corpus, queue, config, pair_rng, optimizer, cache
            )
            losses.append(loss)
        epoch_loss = sum(losses) / len(losses)
        val_recall = (
            validation_recall_at_1(pair.query, val_corpus) if val_corpus else None
        )
        entry = {"epoch": epoch, "loss": epoch_loss, "val_recall1": val_recall}
        history.append(entry)
        logger.info(
            "epoch %d: loss %.4f%s",
            epoch,
            epoch_loss,
            f", val recall@1 {val_recall:.3f}" if val_recall is not None else "",
        )
        if out_dir and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(
                _to_checkpoint(pair, queue, vocab, config, epoch),
                Path(out_dir) / f"epoch_{epoch:03d}.ckpt",
            )

    final = _to_checkpoint(pair, queue, vocab, config, config.epochs)
    if out_dir:
        save_checkpoint(final, Path(out_dir) / "checkpoint.ckpt")
    return TrainResult(checkpoint=final, pair=pair, queue=queue, history=history)


def _default_encoder(vocab: Vocab, config: TrainConfig) -> FunctionEncoder:
    return build_function_encoder(
        vocab,
        seed=config.seed,
        d=config.d,
        filters_per_size=config.filters_per_size,
        windows=config.windows,
        layers=config.layers,
        hidden_dim=config.hidden_dim,
        out_dim=config.out_dim,
        activation=config.activation,
        two_tuple_enabled=config.two_tuple_enabled,
        two_tuple_node_cap=config.two_tuple_node_cap,
        directed_aggregation=config.directed_aggregation,
        address_pattern=config.address_pattern,
    )


def _make_batches(order: list[str], batch_size: int) -> list[list[str]]:
    """Full batches only, except a single undersized batch when the corpus is
    smaller than one batch (keeps enqueue sizes aligned with the queue)."""
    if len(order) < batch_size:
        return [order]
    n_full = len(order) // batch_size
    return [order[i * batch_size : (i + 1) * batch_size] for i in range(n_full)]


def _to_checkpoint(
    pair: EncoderPair,
    queue: EmbeddingQueue,
    vocab: Vocab,
    config: TrainConfig,
    epoch: int,
) -> Checkpoint:
    return Checkpoint(
        config=config,
        vocab=vocab,
        epoch=epoch,
        query_state={k: v.detach().clone() for k, v in pair.query.state_dict().items()},
        key_state={k: v.detach().clone() for k, v in pair.key.state_dict().items()},
        queue_buffer=queue.buffer.detach().clone(),
        queue_head=queue.head,
    )


@torch.no_grad()
def validation_recall_at_1(
    encoder: FunctionEncoder, corpus: Corpus, max_queries: int = 64
) -> float:
    """Cheap held-out probe: for sampled groups, does the closest other-function
    candidate lose to a true sibling variant?"""
    groups = [fid for fid, idxs in corpus.groups.items() if len(idxs) >= 2]
    if not groups:
        return float("nan")
    groups = sorted(groups)[:max_queries]
    variants = corpus.variants
    rows = []
    for start in range(0, len(variants), 64):
        chunk = variants[start : start + 64]
        rows.append(encoder(encoder.pack(chunk)))
    matrix = torch.cat(rows, dim=0)
    hits = 0
    for fid in groups:
        idxs = corpus.groups[fid]
        query_i, target_i = idxs[0], idxs[1]
        sims = matrix @ matrix[query_i]
        sims[query_i] = -2.0
        # exclude other siblings so exactly one relevant candidate remains
        for other in idxs[2:]:
            sims[other] = -2.0
        hits += int(torch.argmax(sims).item() == target_i)
    return hits / len(groups)
