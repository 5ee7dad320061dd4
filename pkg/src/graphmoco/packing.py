"""Turns variants into id arrays and batches of graphs into one padded,
disjoint-union tensor bundle (block-index offsets applied per graph)."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import FunctionVariant
from .normalizer import DEFAULT_ADDRESS_PATTERN, Vocab, encode_instruction, normalize_variant_blocks


@dataclass(frozen=True)
class VariantIds:
    """Token-id form of one variant's ACFG."""

    block_op_ids: tuple[tuple[int, ...], ...]
    block_operand_ids: tuple[tuple[tuple[int, int, int, int], ...], ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n_blocks(self) -> int:
        return len(self.block_op_ids)


def encode_variant_ids(
    variant: FunctionVariant,
    vocab: Vocab,
    address_pattern: str | None = DEFAULT_ADDRESS_PATTERN,
) -> VariantIds:
    """normalize -> encode every instruction of a variant."""
    block_op_ids = []
    block_operand_ids = []
    for block in normalize_variant_blocks(variant, address_pattern):
        ops = []
        operands = []
        for instr in block:
            op_id, operand_ids = encode_instruction(instr, vocab)
            ops.append(op_id)
            operands.append(operand_ids)
        block_op_ids.append(tuple(ops))
        block_operand_ids.append(tuple(operands))
    return VariantIds(
        block_op_ids=tuple(block_op_ids),
        block_operand_ids=tuple(block_operand_ids),
        edges=variant.acfg.edges,
    )


@dataclass
class PackedBatch:
    """Disjoint union of several ACFGs in padded tensor form.

    Blocks of all graphs are stacked along dim 0; ``graph_of_block`` and the
    edge index use the offset block numbering.
    """

    op_ids: torch.Tensor  # (total_blocks, M) long, PAD=0 beyond lengths
    operand_ids: torch.Tensor  # (total_blocks, M, 4) long
    lengths: torch.Tensor  # (total_blocks,) long
    edges: torch.Tensor  # (2, total_edges) long, may be empty
    graph_of_block: torch.Tensor  # (total_blocks,) long
    node_counts: torch.Tensor  # (n_graphs,) long

    @property
    def n_graphs(self) -> int:
        return int(self.node_counts.shape[0])


def pack_batch(items: list[VariantIds]) -> PackedBatch:
    if not items:
        raise ValueError("cannot pack an empty batch")
    lengths = [len(ops) for ids in items for ops in ids.block_op_ids]
    max_len = max(lengths)
    total_blocks = len(lengths)
    op_ids = torch.zeros(total_blocks, max_len, dtype=torch.long)
    operand_ids = torch.zeros(total_blocks, max_len, 4, dtype=torch.long)
    graph_of_block = torch.zeros(total_blocks, dtype=torch.long)
    edge_src: list[int] = []
    edge_dst: list[int] = []
    node_counts = []
    row = 0
    offset = 0
    for g, ids in enumerate(items):
        node_counts.append(ids.n_blocks)
        for ops, operands in zip(ids.block_op_ids, ids.block_operand_ids):
            n = len(ops)
            op_ids[row, :n] = torch.tensor(ops, dtype=torch.long)
            operand_ids[row, :n] = torch.tensor(operands, dtype=torch.long)
            graph_of_block[row] = g
            row += 1
        for s, d in ids.edges:
            edge_src.append(s + offset)
            edge_dst.append(d + offset)
        offset += ids.n_blocks
    edges = torch.tensor([edge_src, edge_dst], dtype=torch.long).reshape(2, -1)
    return PackedBatch(
        op_ids=op_ids,
        operand_ids=operand_ids,
        lengths=torch.tensor(lengths, dtype=torch.long),
        edges=edges,
        graph_of_block=graph_of_block,
        node_counts=torch.tensor(node_counts, dtype=torch.long),
    )
