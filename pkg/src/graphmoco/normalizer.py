"""Instruction normalization, vocabulary construction, and token-id encoding.

Three rewrite rules are applied to every operand before padding:

1. numeric/string literals collapse to ``IMM``,
2. operands that reference addresses become ``inaddress`` / ``ouraddress``
   depending on whether the target lies inside the enclosing function,
3. a ``{ ... }`` register-list span collapses to the single token
   ``Pregister`` (ARM multi-register transfers).

The result is lower-cased (special symbols excepted) and padded or truncated
to exactly one operation plus four operand slots.  Normalization is
idempotent, so already-normalized corpora can be re-ingested safely.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, RawInstruction

PAD = "PAD"
UNK = "UNK"
IMM = "IMM"
IN_ADDRESS = "inaddress"
OUT_ADDRESS = "ouraddress"
PREGISTER = "Pregister"

SPECIAL_TOKENS = frozenset({PAD, IMM, IN_ADDRESS, OUT_ADDRESS, PREGISTER})

N_OPERAND_SLOTS = 4

# Whole-token literals: optional '#' (ARM immediate prefix), optional sign,
# hex or decimal, or a quoted string.
_LITERAL_RE = re.compile(r"^#?-?(0x[0-9a-f]+|[0-9]+)$")
_QUOTED_RE = re.compile(r"""^(".*"|'.*')$""")
# Literals embedded in a larger operand such as [rax+8]; guards keep register
# names like r4 intact.
_INNER_LITERAL_RE = re.compile(r"(?<![0-9a-zA-Z_])#?-?(0x[0-9a-f]+|[0-9]+)(?![0-9a-zA-Z_])")
# Restores IMM spelled by a previous normalization pass after lower-casing.
_IMM_WORD_RE = re.compile(r"(?<![0-9a-zA-Z_])imm(?![0-9a-zA-Z_])")

# Hex literals with at least 4 digits look like code addresses; used only
# when ingestion did not tag the operand explicitly.
DEFAULT_ADDRESS_PATTERN = r"^0x[0-9a-f]{4,}$"


@dataclass(frozen=True)
class NormalizedInstruction:
    """Exactly one operation plus four operand slots (PAD-filled)."""

    operation: str
    operands: tuple[str, str, str, str]

    def tokens(self) -> tuple[str, ...]:
        return (self.operation,) + self.operands


def _normalize_operand_token(token: str, address_re: re.Pattern | None) -> str:
    if token in SPECIAL_TOKENS:
        return token
    low = token.lower()
    if _LITERAL_RE.match(low) or _QUOTED_RE.match(low):
        if address_re is not None and address_re.match(low):
            return OUT_ADDRESS
        return IMM
    low = _IMM_WORD_RE.sub(IMM, low)
    return _INNER_LITERAL_RE.sub(IMM, low)


def normalize_instruction(
    instr: RawInstruction,
    address_pattern: str | None = DEFAULT_ADDRESS_PATTERN,
) -> NormalizedInstruction:
    """Apply the three rewrite rules, lower-case, and pad/truncate to 5 tokens.

    ``address_pattern`` is the fallback heuristic for untagged operands that
    look like addresses (rewritten to ``ouraddress``); pass None to disable.
    """
    if not instr.tokens:
        raise ValueError("cannot normalize an empty instruction")
    operation = instr.tokens[0]
    operation = operation if operation in SPECIAL_TOKENS else operation.lower()
    address_re = re.compile(address_pattern) if address_pattern else None

    operands: list[str] = []
    i = 1
    while i < len(instr.tokens):
        token = instr.tokens[i]
        if token.startswith("{"):
            # swallow the whole register-list span, including one-token spans
            while i < len(instr.tokens) and not instr.tokens[i].endswith("}"):
                i += 1
            i += 1
            operands.append(PREGISTER)
            continue
        if i in instr.in_address_targets:
            operands.append(IN_ADDRESS)
        elif i in instr.out_address_targets:
            operands.append(OUT_ADDRESS)
        else:
            operands.append(_normalize_operand_token(token, address_re))
        i += 1

    operands = operands[:N_OPERAND_SLOTS]
    operands += [PAD] * (N_OPERAND_SLOTS - len(operands))
    return NormalizedInstruction(operation=operation, operands=tuple(operands))


def normalize_variant_blocks(
    variant, address_pattern: str | None = DEFAULT_ADDRESS_PATTERN
) -> list[list[NormalizedInstruction]]:
    """Normalize every instruction of a FunctionVariant, block by block."""
    return [
        [normalize_instruction(instr, address_pattern) for instr in block.instructions]
        for block in variant.acfg.blocks
    ]


@dataclass
class Vocab:
    """Separate dense id spaces for operations and operands; PAD=0, UNK=1."""

    op_index: dict[str, int]
    operand_index: dict[str, int]
    version: int = 1

    def __post_init__(self) -> None:
        for name, index in (("op", self.op_index), ("operand", self.operand_index)):
            if index.get(PAD) != 0 or index.get(UNK) != 1:
                raise ValueError(f"{name} index must reserve PAD=0 and UNK=1")

    @property
    def n_ops(self) -> int:
        return len(self.op_index)

    @property
    def n_operands(self) -> int:
        return len(self.operand_index)

    def op_id(self, token: str) -> int:
        return self.op_index.get(token, 1)

    def operand_id(self, token: str) -> int:
        return self.operand_index.get(token, 1)

    def to_json(self) -> dict:
        return {"ops": self.op_index, "operands": self.operand_index, "version": self.version}

    @classmethod
    def from_json(cls, doc: dict) -> "Vocab":
        return cls(
            op_index=dict(doc["ops"]),
            operand_index=dict(doc["operands"]),
            version=int(doc.get("version", 1)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(
    corpus: Corpus, address_pattern: str | None = DEFAULT_ADDRESS_PATTERN
) -> Vocab:
    """One shared vocabulary over all architectures, sorted for determinism."""
    if not corpus.variants:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ops: set[str] = set()
    operands: set[str] = set()
    for variant in corpus.variants:
        for block in normalize_variant_blocks(variant, address_pattern):
            for instr in block:
                ops.add(instr.operation)
                for operand in instr.operands:
                    if operand != PAD:
                        operands.add(operand)
    ops.discard(PAD)
    ops.discard(UNK)
    operands.discard(UNK)
    op_index = {PAD: 0, UNK: 1}
    for i, token in enumerate(sorted(ops), start=2):
        op_index[token] = i
    operand_index = {PAD: 0, UNK: 1}
    for i, token in enumerate(sorted(operands), start=2):
        operand_index[token] = i
    return Vocab(op_index=op_index, operand_index=operand_index)


def encode_instruction(
    n: NormalizedInstruction, vocab: Vocab
) -> tuple[int, tuple[int, int, int, int]]:
    """Map tokens to ids; unseen tokens become UNK, PAD maps to 0. Never fails."""
    op_id = vocab.op_id(n.operation)
    operand_ids = tuple(
        0 if t == PAD else vocab.operand_id(t) for t in n.operands
    )
    return op_id, operand_ids  # type: ignore[return-value]


def decode_instruction(
    op_id: int, operand_ids: tuple[int, int, int, int], vocab: Vocab
) -> NormalizedInstruction:
    """Inverse of encode_instruction on in-vocabulary ids."""
    rev_ops = {i: t for t, i in vocab.op_index.items()}
    rev_operands = {i: t for t, i in vocab.operand_index.items()}
    return NormalizedInstruction(
        operation=rev_ops.get(op_id, UNK),
        operands=tuple(rev_operands.get(i, UNK) for i in operand_ids),  # type: ignore[arg-type]
    )
