"""Learned token tables: one instruction vector = operation embedding
concatenated with the sum of its operand embeddings (width 2d).

PAD rows are pinned to zero: the forward pass masks PAD operand slots
structurally, so no gradient ever reaches row 0 and the zero-contribution
contract survives training.
"""

from __future__ import annotations

import torch
from torch import nn


class TokenEmbeddingTable(nn.Module):
    """Operation and operand embedding matrices of width d each."""

    def __init__(self, op_vocab_size: int, operand_vocab_size: int, d: int):
        super().__init__()
        if op_vocab_size < 2 or operand_vocab_size < 2:
            raise ValueError("vocab sizes must be >= 2 (PAD and UNK)")
        if d < 1:
            raise ValueError("embedding width must be >= 1")
        self.d = d
        self.op_table = nn.Parameter(torch.zeros(op_vocab_size, d))
        self.operand_table = nn.Parameter(torch.zeros(operand_vocab_size, d))

    def forward(self, op_ids: torch.Tensor, operand_ids: torch.Tensor) -> torch.Tensor:
        """Embed instructions given id tensors of shape (..., ) and (..., 4).

        Returns a (..., 2d) tensor.  PAD operand slots (id 0) are masked out
        of the sum, so they contribute exactly zero regardless of table state.
        """
        op_vecs = self.op_table[op_ids]
        operand_vecs = self.operand_table[operand_ids]
        mask = (operand_ids != 0).unsqueeze(-1).to(operand_vecs.dtype)
        operand_sum = (operand_vecs * mask).sum(dim=-2)
        return torch.cat([op_vecs, operand_sum], dim=-1)


def init_tables(
    op_vocab_size: int, operand_vocab_size: int, d: int, seed: int
) -> TokenEmbeddingTable:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) entries, PAD rows zeroed, seed-deterministic."""
    table = TokenEmbeddingTable(op_vocab_size, operand_vocab_size, d)
    gen = torch.Generator().manual_seed(seed)
    bound = 1.0 / (d ** 0.5)
    with torch.no_grad():
        table.op_table.uniform_(-bound, bound, generator=gen)
        table.operand_table.uniform_(-bound, bound, generator=gen)
        table.op_table[0].zero_()
        table.operand_table[0].zero_()
    return table


def embed_instruction(
    op_id: int, operand_ids: tuple[int, int, int, int], table: TokenEmbeddingTable
) -> torch.Tensor:
    """Vector for one instruction: op_table[op_id] || sum of operand rows."""
    n_ops, n_operands = table.op_table.shape[0], table.operand_table.shape[0]
    if not 0 <= op_id < n_ops:
        raise IndexError(f"op id {op_id} out of bounds for table of {n_ops}")
    for oid in operand_ids:
        if not 0 <= oid < n_operands:
            raise IndexError(f"operand id {oid} out of bounds for table of {n_operands}")
    return table(
        torch.tensor(op_id, dtype=torch.long),
        torch.tensor(operand_ids, dtype=torch.long),
    )
