"""Function-level encoder: message passing over the ACFG with block vectors
as node features, an optional 2-tuple refinement stage over edge-connected
node pairs, and a mean readout projected to a unit-norm 256-d embedding.

Aggregation treats neighborhoods as the undirected union of in- and
out-neighbors by default; a directed mode with separate in/out weights
exists for ablations.  Nothing in the encoder couples samples: batching is
a disjoint graph union and must reproduce per-graph results exactly (up to
float reassociation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .block_encoder import StrandCNN, _ACTIVATIONS
from .corpus import FunctionVariant
from .normalizer import DEFAULT_ADDRESS_PATTERN, Vocab
from .packing import PackedBatch, VariantIds, encode_variant_ids, pack_batch
from .token_embed import TokenEmbeddingTable

EMBED_DIM = 256


@dataclass(frozen=True)
class FunctionEmbedding:
    """Unit-norm function vector plus the variant key it belongs to."""

    vector: np.ndarray
    variant_key: str | None = None


def _undirected_messages(edges: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Unique unordered neighbor pairs -> (msg_src, msg_dst, nonself pairs).

    Each unordered pair {u, v} with u != v yields messages both ways; a
    self-loop yields a single v -> v message.
    """
    if edges.numel() == 0:
        empty = edges.new_zeros(0)
        return empty, empty, edges.new_zeros(2, 0)
    lo = torch.minimum(edges[0], edges[1])
    hi = torch.maximum(edges[0], edges[1])
    pairs = torch.unique(torch.stack([lo, hi], dim=0), dim=1)
    nonself = pairs[:, pairs[0] != pairs[1]]
    loops = pairs[0][pairs[0] == pairs[1]]
    src = torch.cat([nonself[0], nonself[1], loops])
    dst = torch.cat([nonself[1], nonself[0], loops])
    return src, dst, nonself


class GraphEncoder(nn.Module):
    def __init__(
        self,
        in_dim: int,
        hidden_dim: int = EMBED_DIM,
        out_dim: int = EMBED_DIM,
        layers: int = 3,
        activation: str = "tanh",
        two_tuple_enabled: bool = True,
        two_tuple_node_cap: int = 30,
        directed_aggregation: bool = False,
    ):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one message-passing layer")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.layers = layers
        self.activation = activation
        self.two_tuple_enabled = two_tuple_enabled
        self.two_tuple_node_cap = two_tuple_node_cap
        self.directed_aggregation = directed_aggregation

        dims = [in_dim] + [hidden_dim] * layers
        self.self_weights = nn.ParameterList(
            nn.Parameter(torch.zeros(dims[i + 1], dims[i])) for i in range(layers)
        )
        self.neigh_weights = nn.ParameterList(
            nn.Parameter(torch.zeros(dims[i + 1], dims[i])) for i in range(layers)
        )
        if directed_aggregation:
            self.neigh_weights_out = nn.ParameterList(
                nn.Parameter(torch.zeros(dims[i + 1], dims[i])) for i in range(layers)
            )
        self.layer_biases = nn.ParameterList(
            nn.Parameter(torch.zeros(dims[i + 1])) for i in range(layers)
        )
        if two_tuple_enabled:
            self.pair_self_weight = nn.Parameter(torch.zeros(hidden_dim, hidden_dim))
            self.pair_neigh_weight = nn.Parameter(torch.zeros(hidden_dim, hidden_dim))
            self.pair_bias = nn.Parameter(torch.zeros(hidden_dim))
        self.readout_weight = nn.Parameter(torch.zeros(out_dim, hidden_dim))
        self.readout_bias = nn.Parameter(torch.zeros(out_dim))

    def forward(
        self,
        node_feats: torch.Tensor,
        edges: torch.Tensor,
        graph_of_node: torch.Tensor,
        node_counts: torch.Tensor,
        return_node_states: bool = False,
    ):
        """Encode a disjoint union of graphs to (n_graphs, out_dim) unit rows."""
        act = _ACTIVATIONS[self.activation]
        n_nodes = node_feats.shape[0]
        n_graphs = node_counts.shape[0]
        dtype = node_feats.dtype

        if self.directed_aggregation:
            in_src, in_dst = edges[0], edges[1]
            out_src, out_dst = edges[1], edges[0]
            nonself = None
        else:
            src, dst, nonself = _undirected_messages(edges)

        h = node_feats
        for i in range(self.layers):
            out_dim = self.self_weights[i].shape[0]
            if self.directed_aggregation:
                agg_in = h.new_zeros(n_nodes, h.shape[1]).index_add_(0, in_dst, h[in_src])
                agg_out = h.new_zeros(n_nodes, h.shape[1]).index_add_(0, out_dst, h[out_src])
                pre = (
                    h @ self.self_weights[i].T
                    + agg_in @ self.neigh_weights[i].T
                    + agg_out @ self.neigh_weights_out[i].T
                )
            else:
                agg = h.new_zeros(n_nodes, h.shape[1])
                if src.numel():
                    agg.index_add_(0, dst, h[src])
                pre = h @ self.self_weights[i].T + agg @ self.neigh_weights[i].T
            h = act(pre + self.layer_biases[i])

        node_sum = h.new_zeros(n_graphs, self.hidden_dim).index_add_(0, graph_of_node, h)
        readout = node_sum / node_counts.to(dtype).unsqueeze(1)

        if self.two_tuple_enabled:
            if nonself is None:
                _, _, nonself = _undirected_messages(edges)
            readout = readout + self._pair_readout(h, nonself, graph_of_node, node_counts, act)

        z = readout @ self.readout_weight.T + self.readout_bias
        norms = torch.linalg.vector_norm(z, dim=1, keepdim=True)
        if bool((norms == 0).any()):
            raise ValueError("degenerate zero embedding; cannot normalize")
        z = z / norms
        if return_node_states:
            return z, h
        return z

    def _pair_readout(
        self,
        h: torch.Tensor,
        nonself: torch.Tensor,
        graph_of_node: torch.Tensor,
        node_counts: torch.Tensor,
        act,
    ) -> torch.Tensor:
        """Mean-pooled refined 2-tuple states per graph (zero where gated off)."""
        n_graphs = node_counts.shape[0]
        dtype = h.dtype
        zero = h.new_zeros(n_graphs, self.hidden_dim)
        if nonself.numel() == 0:
            return zero
        u, v = nonself[0], nonself[1]
        # gate by each graph's own node count
        enabled = node_counts[graph_of_node[u]] <= self.two_tuple_node_cap
        u, v = u[enabled], v[enabled]
        if u.numel() == 0:
            return zero
        pair_feats = h[u] + h[v]
        # pairs are adjacent iff they share a node: per-node sums give each
        # pair's neighborhood total minus itself at both endpoints
        node_sums = h.new_zeros(h.shape[0], self.hidden_dim)
        node_sums.index_add_(0, u, pair_feats)
        node_sums.index_add_(0, v, pair_feats)
        neighbor_sum = node_sums[u] + node_sums[v] - 2.0 * pair_feats
        refined = act(
            pair_feats @ self.pair_self_weight.T
            + neighbor_sum @ self.pair_neigh_weight.T
            + self.pair_bias
        )
        pair_graph = graph_of_node[u]
        pair_sum = h.new_zeros(n_graphs, self.hidden_dim).index_add_(0, pair_graph, refined)
        pair_counts = torch.zeros(n_graphs, dtype=dtype, device=h.device).index_add_(
            0, pair_graph, torch.ones(u.shape[0], dtype=dtype, device=h.device)
        )
        return pair_sum / pair_counts.clamp(min=1.0).unsqueeze(1)


def init_graph_params(
    in_dim: int,
    hidden_dim: int,
    seed: int,
    out_dim: int = EMBED_DIM,
    layers: int = 3,
    activation: str = "tanh",
    two_tuple_enabled: bool = True,
    two_tuple_node_cap: int = 30,
    directed_aggregation: bool = False,
) -> GraphEncoder:
    """Fan-in-scaled uniform initialization, deterministic given seed."""
    enc = GraphEncoder(
        in_dim,
        hidden_dim,
        out_dim,
        layers,
        activation,
        two_tuple_enabled,
        two_tuple_node_cap,
        directed_aggregation,
    )
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in enc.parameters():
            fan_in = p.shape[1] if p.ndim == 2 else max(p.shape[0], 1)
            bound = 1.0 / (fan_in ** 0.5)
            p.uniform_(-bound, bound, generator=gen)
    return enc


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


class FunctionEncoder(nn.Module):
    """Instruction -> block -> graph encoder over packed ACFG batches."""

    def __init__(
        self,
        vocab: Vocab,
        token_table: TokenEmbeddingTable,
        strand: StrandCNN,
        graph: GraphEncoder,
        address_pattern: str | None = DEFAULT_ADDRESS_PATTERN,
    ):
        super().__init__()
        self.vocab = vocab
        self.token_table = token_table
        self.strand = strand
        self.graph = graph
        self.address_pattern = address_pattern

    def forward(self, packed: PackedBatch) -> torch.Tensor:
        dtype = self.token_table.op_table.dtype
        iota = self.token_table(packed.op_ids, packed.operand_ids)
        max_len = packed.op_ids.shape[1]
        seq_mask = (
            torch.arange(max_len, device=iota.device).unsqueeze(0)
            < packed.lengths.unsqueeze(1)
        ).to(dtype)
        iota = iota * seq_mask.unsqueeze(-1)
        block_vecs = self.strand(iota, packed.lengths)
        return self.graph(
            block_vecs, packed.edges, packed.graph_of_block, packed.node_counts
        )

    def pack(self, variants: list[FunctionVariant]) -> PackedBatch:
        return pack_batch(
            [encode_variant_ids(v, self.vocab, self.address_pattern) for v in variants]
        )

    def pack_ids(self, items: list[VariantIds]) -> PackedBatch:
        return pack_batch(items)

    @torch.no_grad()
    def embed_variants(self, variants: list[FunctionVariant]) -> list[FunctionEmbedding]:
        out = self(self.pack(variants))
        return [
            FunctionEmbedding(vector=row.numpy().astype(np.float32), variant_key=v.key_str)
            for row, v in zip(out, variants)
        ]


def build_function_encoder(
    vocab: Vocab,
    seed: int,
    d: int = 64,
    filters_per_size: int = 64,
    windows: tuple[int, ...] = (2, 3, 4),
    layers: int = 3,
    hidden_dim: int = EMBED_DIM,
    out_dim: int = EMBED_DIM,
    activation: str = "tanh",
    two_tuple_enabled: bool = True,
    two_tuple_node_cap: int = 30,
    directed_aggregation: bool = False,
    address_pattern: str | None = DEFAULT_ADDRESS_PATTERN,
) -> FunctionEncoder:
    """Assemble and deterministically initialize the three-level encoder."""
    from .block_encoder import init_strand_params
    from .token_embed import init_tables

    table = init_tables(vocab.n_ops, vocab.n_operands, d, seed)
    strand = init_strand_params(windows, filters_per_size, d, seed + 1, activation)
    graph = init_graph_params(
        strand.out_dim,
        hidden_dim,
        seed + 2,
        out_dim,
        layers,
        activation,
        two_tuple_enabled,
        two_tuple_node_cap,
        directed_aggregation,
    )
    return FunctionEncoder(vocab, table, strand, graph, address_pattern)


# ---------------------------------------------------------------------------
# Functional surface (no-grad convenience wrappers)
# ---------------------------------------------------------------------------


def encode_graph(
    node_feats: torch.Tensor,
    edges: list[tuple[int, int]] | torch.Tensor,
    params: GraphEncoder,
) -> FunctionEmbedding:
    """Encode a single graph given explicit node features and directed edges."""
    node_feats = torch.as_tensor(node_feats)
    if node_feats.ndim != 2 or node_feats.shape[0] < 1:
        raise ValueError("node_feats must be a non-empty (V, in_dim) matrix")
    if not isinstance(edges, torch.Tensor):
        edges = torch.tensor(
            [[e[0] for e in edges], [e[1] for e in edges]], dtype=torch.long
        ).reshape(2, -1)
    n = node_feats.shape[0]
    if edges.numel() and (edges.min() < 0 or edges.max() >= n):
        raise ValueError("edge endpoints out of bounds")
    with torch.no_grad():
        z = params(
            node_feats,
            edges,
            torch.zeros(n, dtype=torch.long),
            torch.tensor([n], dtype=torch.long),
        )
    return FunctionEmbedding(vector=z.squeeze(0).numpy().astype(np.float32))


def encode_function(
    variant: FunctionVariant,
    vocab: Vocab,
    tables: TokenEmbeddingTable,
    strand_params: StrandCNN,
    graph_params: GraphEncoder,
    address_pattern: str | None = DEFAULT_ADDRESS_PATTERN,
) -> FunctionEmbedding:
    """Full pipeline for one variant: normalize, embed, encode block and graph."""
    encoder = FunctionEncoder(vocab, tables, strand_params, graph_params, address_pattern)
    return encoder.embed_variants([variant])[0]


def encode_batch(
    variants: list[FunctionVariant],
    vocab: Vocab,
    tables: TokenEmbeddingTable,
    strand_params: StrandCNN,
    graph_params: GraphEncoder,
    address_pattern: str | None = DEFAULT_ADDRESS_PATTERN,
) -> list[FunctionEmbedding]:
    """Encode a batch as one disjoint-union graph and dispatch per-graph rows."""
    if not variants:
        raise ValueError("cannot encode an empty batch")
    encoder = FunctionEncoder(vocab, tables, strand_params, graph_params, address_pattern)
    return encoder.embed_variants(variants)
