"""Block-level encoder: 1-D convolutions over the instruction-embedding
sequence capture strands, one global max per filter, concatenated with the
block's mean instruction embedding.

Window sizes are capped at 4; sequences shorter than the largest window are
zero-padded up to it, and the padded positions participate in windows (the
mean part uses only real instructions).
"""

from __future__ import annotations

import torch
from torch import nn

MAX_WINDOW = 4

_ACTIVATIONS = {
    "tanh": torch.tanh,
    "relu": torch.relu,
    "identity": lambda x: x,
}


class StrandCNN(nn.Module):
    """Per-window-size conv weights (filters x h x 2d) with shared pooling."""

    def __init__(
        self,
        windows: tuple[int, ...],
        filters_per_size: int,
        d: int,
        activation: str = "tanh",
    ):
        super().__init__()
        windows = tuple(sorted(set(windows)))
        if not windows or min(windows) < 1:
            raise ValueError("need at least one window size >= 1")
        if max(windows) > MAX_WINDOW:
            raise ValueError(f"window sizes must be <= {MAX_WINDOW}, got {windows}")
        if filters_per_size < 1:
            raise ValueError("filters_per_size must be >= 1")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.windows = windows
        self.filters_per_size = filters_per_size
        self.d = d
        self.activation = activation
        self.weights = nn.ParameterList(
            nn.Parameter(torch.zeros(filters_per_size, h, 2 * d)) for h in windows
        )
        self.biases = nn.ParameterList(
            nn.Parameter(torch.zeros(filters_per_size)) for _ in windows
        )

    @property
    def out_dim(self) -> int:
        return len(self.windows) * self.filters_per_size + 2 * self.d

    def forward(self, instr_embeds: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Encode a padded batch of blocks.

        instr_embeds: (B, M, 2d) with rows at positions >= lengths[b] zeroed.
        lengths: (B,) true instruction counts, all >= 1.
        Returns (B, len(windows)*filters + 2d).
        """
        act = _ACTIVATIONS[self.activation]
        B, M, _ = instr_embeds.shape
        h_max = max(self.windows)
        if M < h_max:
            pad = instr_embeds.new_zeros(B, h_max - M, 2 * self.d)
            instr_embeds = torch.cat([instr_embeds, pad], dim=1)
            M = h_max
        # windows run over the first max(n, h_max) positions of each block
        effective = torch.clamp(lengths, min=h_max)
        x = instr_embeds.transpose(1, 2)  # (B, 2d, M)
        pooled = []
        for h, w, b in zip(self.windows, self.weights, self.biases):
            conv = nn.functional.conv1d(x, w.permute(0, 2, 1), b)  # (B, F, M-h+1)
            feats = act(conv)
            positions = torch.arange(M - h + 1, device=feats.device)
            valid = positions.unsqueeze(0) < (effective - h + 1).unsqueeze(1)
            feats = feats.masked_fill(~valid.unsqueeze(1), float("-inf"))
            pooled.append(feats.max(dim=2).values)
        mean = instr_embeds.sum(dim=1) / lengths.to(instr_embeds.dtype).unsqueeze(1)
        return torch.cat(pooled + [mean], dim=1)


def init_strand_params(
    windows: tuple[int, ...],
    filters_per_size: int,
    d: int,
    seed: int,
    activation: str = "tanh",
) -> StrandCNN:
    """Fan-in-scaled uniform init: magnitudes <= 1/sqrt(h*2d), deterministic."""
    params = StrandCNN(windows, filters_per_size, d, activation)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for h, w, b in zip(params.windows, params.weights, params.biases):
            bound = 1.0 / ((h * 2 * d) ** 0.5)
            w.uniform_(-bound, bound, generator=gen)
            b.uniform_(-bound, bound, generator=gen)
    return params


def encode_block(instr_embeds: torch.Tensor, params: StrandCNN) -> torch.Tensor:
    """Encode a single block given its (n, 2d) instruction-embedding matrix."""
    if instr_embeds.ndim != 2 or instr_embeds.shape[0] < 1:
        raise ValueError("expected a non-empty (n, 2d) matrix")
    n = instr_embeds.shape[0]
    lengths = torch.tensor([n], device=instr_embeds.device)
    return params(instr_embeds.unsqueeze(0), lengths).squeeze(0)
