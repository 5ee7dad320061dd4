"""Similarity metric, ranking/classification metrics, cross-configuration
pair tasks, and the pool-search evaluation harness.

All metrics are exact (no sampling): AUC is the Mann-Whitney statistic with
midrank tie handling, AP follows the printed precision-at-k formula with
division by the total relevant count, and rankings break score ties by
ascending variant key so results are reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .corpus import Corpus, FunctionVariant

TASK_KINDS = ("arch", "opt", "comp", "xc", "xcxb", "xa", "xm")

# (axes that must differ, axes that must match) between the two variants
_KIND_CONSTRAINTS: dict[str, tuple[frozenset, frozenset]] = {
    "arch": (frozenset({"arch"}), frozenset()),
    "opt": (frozenset({"opt_level"}), frozenset({"compiler", "compiler_version", "arch"})),
    "comp": (frozenset({"compiler"}), frozenset()),
    "xc": (
        frozenset({"compiler", "compiler_version", "opt_level"}),
        frozenset({"arch", "bitness"}),
    ),
    "xcxb": (
        frozenset({"compiler", "compiler_version", "opt_level", "bitness"}),
        frozenset({"arch"}),
    ),
    "xa": (
        frozenset({"arch", "bitness"}),
        frozenset({"compiler", "compiler_version", "opt_level"}),
    ),
    "xm": (frozenset(), frozenset()),
}


class UndefinedMetricError(ValueError):
    """The metric is not defined on this input (e.g. single-class AUC)."""


class InfeasibleTaskError(ValueError):
    """The corpus metadata cannot satisfy the task's constraints."""


def cosine_sim(a: np.ndarray | Sequence[float], b: np.ndarray | Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# Classification / ranking metrics
# ---------------------------------------------------------------------------


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie), computed exactly."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must be parallel")
    n_pos = sum(1 for l in labels if l == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1
    rank_sum_pos = sum(r for r, l in zip(ranks, labels) if l == 1)
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@dataclass(frozen=True)
class QueryRanking:
    """One query's candidate pool ordered by descending similarity."""

    query_key: str
    candidates: tuple[str, ...]
    relevant: tuple[bool, ...]
    scores: tuple[float, ...] = ()

    def first_relevant_rank(self) -> Optional[int]:
        for i, rel in enumerate(self.relevant, start=1):
            if rel:
                return i
        return None

    @property
    def n_relevant(self) -> int:
        return sum(self.relevant)


@dataclass
class RankingResult:
    queries: list[QueryRanking]

    def __len__(self) -> int:
        return len(self.queries)


def mrr_at_k(rankings: RankingResult, k: int = 10) -> float:
    """Mean reciprocal rank of the first relevant item, zero past the cutoff."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not rankings.queries:
        raise ValueError("need at least one query")
    total = 0.0
    for q in rankings.queries:
        rank = q.first_relevant_rank()
        if rank is not None and rank <= k:
            total += 1.0 / rank
    return total / len(rankings.queries)


def recall_at_1(rankings: RankingResult) -> float:
    if not rankings.queries:
        raise ValueError("need at least one query")
    hits = sum(1 for q in rankings.queries if q.relevant and q.relevant[0])
    return hits / len(rankings.queries)


def average_precision(
    ranking: QueryRanking, n: int = 10, n_rel: Optional[int] = None
) -> float:
    """Sum of precision-at-k over relevant top-n hits, divided by the total
    relevant count (which may exceed n, capping attainable AP below 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_rel is None:
        n_rel = ranking.n_relevant
    if n_rel < 1:
        raise ValueError("N_rel must be >= 1")
    hits = 0
    total = 0.0
    for k, rel in enumerate(ranking.relevant[:n], start=1):
        if rel:
            hits += 1
            total += hits / k
    return total / n_rel


def mean_ap(rankings: RankingResult, n: int = 10, cap_nrel: bool = False) -> float:
    """Arithmetic mean of per-query AP; ``cap_nrel`` clips N_rel to n."""
    if not rankings.queries:
        raise ValueError("need at least one query")
    aps = []
    for q in rankings.queries:
        n_rel = q.n_relevant
        if cap_nrel:
            n_rel = min(n_rel, n)
        aps.append(average_precision(q, n=n, n_rel=n_rel))
    return sum(aps) / len(aps)


def classify_pairs(scores: Sequence[float], threshold: float) -> list[bool]:
    """Threshold rule: a pair whose similarity reaches the threshold is 'same'."""
    return [s >= threshold for s in scores]


# ---------------------------------------------------------------------------
# Task construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pool:
    query_key: str
    candidate_keys: tuple[str, ...]
    relevant_keys: frozenset[str]


@dataclass
class PairTask:
    """Positive/negative variant-key pairs plus ranking pools for one kind."""

    kind: str
    positive_pairs: list[tuple[str, str]]
    negative_pairs: list[tuple[str, str]]
    pool_size: int
    pools: list[Pool] = field(default_factory=list)


def _satisfies(a: FunctionVariant, b: FunctionVariant, kind: str) -> bool:
    differ, match = _KIND_CONSTRAINTS[kind]
    for axis in differ:
        if getattr(a, axis) == getattr(b, axis):
            return False
    for axis in match:
        if getattr(a, axis) != getattr(b, axis):
            return False
    return True


def _check_axis_feasibility(corpus: Corpus, kind: str) -> None:
    differ, _ = _KIND_CONSTRAINTS[kind]
    for axis in sorted(differ):
        values = {getattr(v, axis) for v in corpus.variants}
        if len(values) < 2:
            raise InfeasibleTaskError(
                f"task {kind!r} needs variants differing in {axis}, "
                f"but the corpus has a single value {next(iter(values))!r}"
            )


def build_pair_task(
    corpus: Corpus,
    kind: str,
    n_pairs: int,
    pool_size: int,
    seed: int,
) -> PairTask:
    """Sample positives/negatives satisfying exactly the kind's constraints,
    plus one ranking pool per positive (target + other-function distractors)."""
    if kind not in _KIND_CONSTRAINTS:
        raise ValueError(f"unknown task kind {kind!r}")
    if n_pairs < 1 or pool_size < 1:
        raise ValueError("n_pairs and pool_size must be >= 1")
    _check_axis_feasibility(corpus, kind)
    rng = random.Random(seed)
    groups = [fid for fid, idxs in corpus.groups.items() if len(idxs) >= 2]
    if not groups:
        raise InfeasibleTaskError("no function has two variants to pair")
    groups.sort()

    positives: list[tuple[str, str]] = []
    attempts = 0
    max_attempts = 200 * n_pairs
    while len(positives) < n_pairs and attempts < max_attempts:
        attempts += 1
        fid = rng.choice(groups)
        members = corpus.variants_of(fid)
        a, b = rng.sample(members, 2)
        if _satisfies(a, b, kind):
            positives.append((a.key_str, b.key_str))
    if not positives:
        differ, _ = _KIND_CONSTRAINTS[kind]
        raise InfeasibleTaskError(
            f"no positive pair satisfies {kind!r} (axes {sorted(differ)}) "
            f"within any function group"
        )

    negatives: list[tuple[str, str]] = []
    attempts = 0
    while len(negatives) < len(positives) and attempts < max_attempts:
        attempts += 1
        a, b = rng.sample(corpus.variants, 2)
        if a.function_id != b.function_id and _satisfies(a, b, kind):
            negatives.append((a.key_str, b.key_str))
    if not negatives:
        raise InfeasibleTaskError(f"no negative pair satisfies {kind!r}")

    by_key = {v.key_str: v for v in corpus.variants}
    pools = []
    for q_key, t_key in positives:
        q_fid = by_key[q_key].function_id
        distractors = [v.key_str for v in corpus.variants if v.function_id != q_fid]
        rng.shuffle(distractors)
        chosen = distractors[: max(0, pool_size - 1)]
        pools.append(
            Pool(
                query_key=q_key,
                candidate_keys=tuple([t_key] + chosen),
                relevant_keys=frozenset({t_key}),
            )
        )
    return PairTask(
        kind=kind,
        positive_pairs=positives,
        negative_pairs=negatives,
        pool_size=pool_size,
        pools=pools,
    )


def build_search_task(
    corpus: Corpus,
    pool_size: int,
    seed: int,
    n_queries: int = 50,
    query_function_ids: Optional[Sequence[str]] = None,
) -> PairTask:
    """Pool-search harness: rank each query against a candidate pool that
    contains every sibling variant of the query's function.

    ``pool_size`` 0 means the entire corpus.  ``query_function_ids`` selects
    the query set explicitly (the vulnerability-search shape: known-bad
    functions against a firmware-role corpus).
    """
    rng = random.Random(seed)
    if query_function_ids is None:
        eligible = sorted(fid for fid, idxs in corpus.groups.items() if len(idxs) >= 2)
        if not eligible:
            raise InfeasibleTaskError("no function has two variants to search for")
        rng.shuffle(eligible)
        query_function_ids = eligible[:n_queries]
    else:
        for fid in query_function_ids:
            if fid not in corpus.groups:
                raise KeyError(f"unknown function_id {fid!r}")
            if len(corpus.groups[fid]) < 2:
                raise InfeasibleTaskError(
                    f"function {fid!r} has no sibling variant to find"
                )

    positives: list[tuple[str, str]] = []
    pools: list[Pool] = []
    for fid in query_function_ids:
        members = corpus.variants_of(fid)
        query = members[0]
        siblings = [v.key_str for v in members[1:]]
        positives.append((query.key_str, siblings[0]))
        distractors = [v.key_str for v in corpus.variants if v.function_id != fid]
        rng.shuffle(distractors)
        if pool_size > 0:
            budget = max(0, pool_size - len(siblings))
            distractors = distractors[:budget]
        pools.append(
            Pool(
                query_key=query.key_str,
                candidate_keys=tuple(siblings + distractors),
                relevant_keys=frozenset(siblings),
            )
        )

    negatives: list[tuple[str, str]] = []
    attempts = 0
    while len(negatives) < len(positives) and attempts < 200 * len(positives):
        attempts += 1
        a, b = rng.sample(corpus.variants, 2)
        if a.function_id != b.function_id:
            negatives.append((a.key_str, b.key_str))
    return PairTask(
        kind="search",
        positive_pairs=positives,
        negative_pairs=negatives,
        pool_size=pool_size,
        pools=pools,
    )


# ---------------------------------------------------------------------------
# Evaluation harness
# ---------------------------------------------------------------------------


@dataclass
class EvalOutcome:
    report: dict
    rankings: RankingResult
    pair_scores: list[float]
    pair_labels: list[int]


def _embed_keys(
    encoder, corpus: Corpus, keys: Iterable[str]
) -> dict[str, np.ndarray]:
    by_key = {v.key_str: v for v in corpus.variants}
    wanted = sorted(set(keys))
    missing = [k for k in wanted if k not in by_key]
    if missing:
        raise KeyError(f"variant keys not in corpus: {missing[:3]}...")
    vectors: dict[str, np.ndarray] = {}
    variants = [by_key[k] for k in wanted]
    for start in range(0, len(variants), 64):
        chunk = variants[start : start + 64]
        for v, emb in zip(chunk, encoder.embed_variants(chunk)):
            vectors[v.key_str] = emb.vector
    return vectors


def rank_pool(
    query_vec: np.ndarray,
    pool: Pool,
    vectors: dict[str, np.ndarray],
) -> QueryRanking:
    """Descending cosine order with deterministic ascending-key tie-break."""
    scored = [
        (cosine_sim(query_vec, vectors[key]), key) for key in pool.candidate_keys
    ]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return QueryRanking(
        query_key=pool.query_key,
        candidates=tuple(key for _, key in scored),
        relevant=tuple(key in pool.relevant_keys for _, key in scored),
        scores=tuple(score for score, _ in scored),
    )


def run_search_eval(
    checkpoint: Checkpoint,
    corpus: Corpus,
    task: PairTask,
    metrics: Sequence[str] = ("auc", "mrr10", "recall1", "map"),
    cap_nrel: bool = False,
    encoder=None,
) -> EvalOutcome:
    """Embed every pooled variant, rank by cosine, and report the requested
    metrics as a JSON-ready document (config echo and corpus fingerprint
    included)."""
    known = {"auc", "mrr10", "recall1", "map"}
    unknown = [m for m in metrics if m not in known]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}")
    if encoder is None:
        encoder = checkpoint.build_query_encoder()

    needed: set[str] = set()
    for a, b in task.positive_pairs + task.negative_pairs:
        needed.update((a, b))
    for pool in task.pools:
        needed.add(pool.query_key)
        needed.update(pool.candidate_keys)
    vectors = _embed_keys(encoder, corpus, needed)

    pair_scores: list[float] = []
    pair_labels: list[int] = []
    for a, b in task.positive_pairs:
        pair_scores.append(cosine_sim(vectors[a], vectors[b]))
        pair_labels.append(1)
    for a, b in task.negative_pairs:
        pair_scores.append(cosine_sim(vectors[a], vectors[b]))
        pair_labels.append(0)

    rankings = RankingResult(
        queries=[rank_pool(vectors[p.query_key], p, vectors) for p in task.pools]
    )

    values: dict[str, float] = {}
    for m in metrics:
        if m == "auc":
            values["auc"] = auc_roc(pair_scores, pair_labels)
        elif m == "mrr10":
            values["mrr10"] = mrr_at_k(rankings, k=10)
        elif m == "recall1":
            values["recall1"] = recall_at_1(rankings)
        elif m == "map":
            values["map"] = mean_ap(rankings, n=10, cap_nrel=cap_nrel)

    report = {
        "task": task.kind,
        "pool": task.pool_size,
        "metrics": values,
        "config": checkpoint.config.to_dict(),
        "corpus_fingerprint": corpus.fingerprint(),
    }
    return EvalOutcome(
        report=report, rankings=rankings, pair_scores=pair_scores, pair_labels=pair_labels
    )
