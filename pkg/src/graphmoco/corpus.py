"""Corpus data model: function variants, ingestion, splits, pair sampling.

A corpus is a flat list of compiled function variants grouped by the source
function they came from.  Variants of one function play the role of
augmented views of each other: a positive pair is simply two distinct
variants drawn from the same group.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

ARCHES = ("x86", "arm", "mips")
BITNESSES = (32, 64)
OPT_LEVELS = ("O0", "O1", "O2", "O3", "Os")

METADATA_AXES = ("arch", "bitness", "compiler", "compiler_version", "opt_level")


class CorpusFormatError(ValueError):
    """A corpus file line failed to parse or violated the record schema."""


class DuplicateVariantError(ValueError):
    """Two variants share the same (function_id, arch, bitness, compiler, version, opt) key."""


class InfeasibleSplitError(ValueError):
    """Requested split has more nonzero parts than there are function groups."""


@dataclass(frozen=True)
class RawInstruction:
    """One assembly instruction as a list of text tokens (token 0 = operation).

    ``in_address_targets`` / ``out_address_targets`` are optional token-index
    sets marking operands known to reference addresses inside / outside the
    enclosing function.  That scope information cannot be recovered from the
    token text, so it rides along from ingestion.
    """

    tokens: tuple[str, ...]
    in_address_targets: frozenset[int] = frozenset()
    out_address_targets: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("instruction must have at least one token")
        if self.in_address_targets & self.out_address_targets:
            raise ValueError("in/out address target sets must be disjoint")
        for idx in self.in_address_targets | self.out_address_targets:
            if not 0 <= idx < len(self.tokens):
                raise ValueError(f"address target index {idx} out of bounds")


@dataclass(frozen=True)
class BasicBlock:
    instructions: tuple[RawInstruction, ...]

    def __post_init__(self) -> None:
        if not self.instructions:
            raise ValueError("basic block must contain at least one instruction")


@dataclass(frozen=True)
class ACFG:
    """Directed control-flow graph over basic blocks.

    Duplicate edges are collapsed on construction; self-loops are kept.
    """

    blocks: tuple[BasicBlock, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ValueError("ACFG must contain at least one block")
        n = len(self.blocks)
        seen: set[tuple[int, int]] = set()
        deduped = []
        for e in self.edges:
            src, dst = e
            if not (0 <= src < n and 0 <= dst < n):
                raise ValueError(f"edge {e!r} out of bounds for {n} blocks")
            if (src, dst) not in seen:
                seen.add((src, dst))
                deduped.append((src, dst))
        object.__setattr__(self, "edges", tuple(deduped))


@dataclass(frozen=True)
class FunctionVariant:
    """One compiled instance of a source function."""

    function_id: str
    arch: str
    bitness: int
    compiler: str
    compiler_version: str
    opt_level: str
    acfg: ACFG

    def __post_init__(self) -> None:
        if self.arch not in ARCHES:
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.bitness not in BITNESSES:
            raise ValueError(f"unknown bitness {self.bitness!r}")
        if self.opt_level not in OPT_LEVELS:
            raise ValueError(f"unknown opt level {self.opt_level!r}")

    @property
    def key(self) -> tuple[str, str, int, str, str, str]:
        return (
            self.function_id,
            self.arch,
            self.bitness,
            self.compiler,
            self.compiler_version,
            self.opt_level,
        )

    @property
    def key_str(self) -> str:
        return "|".join(str(p) for p in self.key)


@dataclass
class Corpus:
    """Immutable-after-construction list of variants plus function_id groups."""

    variants: list[FunctionVariant]
    groups: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.groups:
            groups: dict[str, list[int]] = {}
            for i, v in enumerate(self.variants):
                groups.setdefault(v.function_id, []).append(i)
            self.groups = groups

    def __len__(self) -> int:
        return len(self.variants)

    def group_ids(self) -> list[str]:
        return list(self.groups.keys())

    def variants_of(self, function_id: str) -> list[FunctionVariant]:
        if function_id not in self.groups:
            raise KeyError(f"unknown function_id {function_id!r}")
        return [self.variants[i] for i in self.groups[function_id]]

    def fingerprint(self) -> str:
        """SHA-256 over the canonical serialized form (load-order independent of file formatting)."""
        h = hashlib.sha256()
        for v in self.variants:
            h.update(_variant_to_json(v).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------


def _variant_to_record(v: FunctionVariant) -> dict:
    blocks = [[list(instr.tokens) for instr in b.instructions] for b in v.acfg.blocks]
    record = {
        "function_id": v.function_id,
        "arch": v.arch,
        "bitness": v.bitness,
        "compiler": v.compiler,
        "compiler_version": v.compiler_version,
        "opt_level": v.opt_level,
        "blocks": blocks,
        "edges": [list(e) for e in v.acfg.edges],
    }
    tags = [
        [
            {"in": sorted(i.in_address_targets), "out": sorted(i.out_address_targets)}
            if (i.in_address_targets or i.out_address_targets)
            else None
            for i in b.instructions
        ]
        for b in v.acfg.blocks
    ]
    if any(t is not None for bt in tags for t in bt):
        record["addr_tags"] = tags
    return record


def _variant_to_json(v: FunctionVariant) -> str:
    return json.dumps(_variant_to_record(v), sort_keys=True, separators=(",", ":"))


def _variant_from_record(record: dict) -> FunctionVariant:
    required = (
        "function_id",
        "arch",
        "bitness",
        "compiler",
        "compiler_version",
        "opt_level",
        "blocks",
        "edges",
    )
    for key in required:
        if key not in record:
            raise ValueError(f"missing field {key!r}")
    raw_blocks = record["blocks"]
    if not isinstance(raw_blocks, list) or not raw_blocks:
        raise ValueError("blocks must be a non-empty list")
    tags = record.get("addr_tags")
    if tags is not None and len(tags) != len(raw_blocks):
        raise ValueError("addr_tags must parallel blocks")
    blocks = []
    for bi, raw_block in enumerate(raw_blocks):
        if not isinstance(raw_block, list) or not raw_block:
            raise ValueError(f"block {bi} must be a non-empty instruction list")
        block_tags = tags[bi] if tags is not None else None
        if block_tags is not None and len(block_tags) != len(raw_block):
            raise ValueError(f"addr_tags for block {bi} must parallel its instructions")
        instrs = []
        for ii, raw_instr in enumerate(raw_block):
            if not isinstance(raw_instr, list) or not raw_instr:
                raise ValueError(f"instruction {bi}/{ii} must be a non-empty token list")
            tag = block_tags[ii] if block_tags is not None else None
            tag = tag or {}
            instrs.append(
                RawInstruction(
                    tokens=tuple(str(t) for t in raw_instr),
                    in_address_targets=frozenset(tag.get("in", ())),
                    out_address_targets=frozenset(tag.get("out", ())),
                )
            )
        blocks.append(BasicBlock(tuple(instrs)))
    edges = tuple((int(e[0]), int(e[1])) for e in record["edges"])
    return FunctionVariant(
        function_id=str(record["function_id"]),
        arch=record["arch"],
        bitness=int(record["bitness"]),
        compiler=str(record["compiler"]),
        compiler_version=str(record["compiler_version"]),
        opt_level=record["opt_level"],
        acfg=ACFG(blocks=tuple(blocks), edges=edges),
    )


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus file, one FunctionVariant per line.

    Raises CorpusFormatError (naming the line) on malformed records and
    DuplicateVariantError when two lines share a full variant key.
    """
    path = Path(path)
    variants: list[FunctionVariant] = []
    seen_keys: set[tuple] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                variant = _variant_from_record(record)
            except DuplicateVariantError:
                raise
            except Exception as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
            if variant.key in seen_keys:
                raise DuplicateVariantError(
                    f"{path}:{lineno}: duplicate variant key {variant.key_str}"
                )
            seen_keys.add(variant.key)
            variants.append(variant)
    return Corpus(variants=variants)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for v in corpus.variants:
            fh.write(_variant_to_json(v))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Splits and pair sampling
# ---------------------------------------------------------------------------


def split_corpus(
    corpus: Corpus,
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[Corpus, Corpus, Corpus]:
    """Partition by function_id into (train, val, test), deterministically.

    All variants of one source function land in exactly one split.
    """
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios!r}")
    group_ids = sorted(corpus.groups.keys())
    nonzero = sum(1 for r in ratios if r > 0)
    if len(group_ids) < nonzero:
        raise InfeasibleSplitError(
            f"{len(group_ids)} groups cannot fill {nonzero} nonzero splits"
        )
    rng = random.Random(seed)
    rng.shuffle(group_ids)

    n = len(group_ids)
    # Largest-remainder allocation, then guarantee >=1 group per nonzero split.
    exact = [r * n for r in ratios]
    counts = [int(e) for e in exact]
    remainders = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in remainders:
        if sum(counts) == n:
            break
        counts[i] += 1
    for i in range(3):
        while ratios[i] > 0 and counts[i] == 0:
            donor = max(
                (j for j in range(3) if counts[j] > 1),
                key=lambda j: counts[j],
            )
            counts[donor] -= 1
            counts[i] += 1

    out: list[Corpus] = []
    start = 0
    for c in counts:
        chosen = set(group_ids[start : start + c])
        start += c
        out.append(
            Corpus(variants=[v for v in corpus.variants if v.function_id in chosen])
        )
    return out[0], out[1], out[2]


def sample_positive_pair(
    corpus: Corpus,
    function_id: str,
    rng: random.Random,
    allow_self_pair: bool = False,
) -> tuple[FunctionVariant, FunctionVariant]:
    """Draw two distinct variants of the same function, uniformly over ordered pairs.

    Groups of size 1 are rejected unless ``allow_self_pair`` is set (smoke-test
    policy), in which case the single variant is paired with itself.
    """
    members = corpus.variants_of(function_id)
    if len(members) < 2:
        if allow_self_pair and len(members) == 1:
            return members[0], members[0]
        raise ValueError(
            f"group {function_id!r} has {len(members)} variant(s); need >= 2 for a positive pair"
        )
    i = rng.randrange(len(members))
    j = rng.randrange(len(members) - 1)
    if j >= i:
        j += 1
    return members[i], members[j]


def eligible_training_ids(corpus: Corpus, allow_self_pair: bool = False) -> list[str]:
    """Function ids usable for positive-pair sampling, in deterministic order."""
    min_size = 1 if allow_self_pair else 2
    return sorted(fid for fid, idxs in corpus.groups.items() if len(idxs) >= min_size)


def dedup_identical_groups(corpus: Corpus) -> Corpus:
    """Drop later groups whose variant-content signature duplicates an earlier group.

    Off by default everywhere; exposed for corpora that carry the same
    function under several ids (e.g. vendored libraries).
    """
    seen: set[str] = set()
    keep: set[str] = set()
    for fid in corpus.group_ids():
        sig = hashlib.sha256()
        for line in sorted(
            _variant_to_json(
                FunctionVariant(
                    function_id="",
                    arch=v.arch,
                    bitness=v.bitness,
                    compiler=v.compiler,
                    compiler_version=v.compiler_version,
                    opt_level=v.opt_level,
                    acfg=v.acfg,
                )
            )
            for v in corpus.variants_of(fid)
        ):
            sig.update(line.encode("utf-8"))
        digest = sig.hexdigest()
        if digest not in seen:
            seen.add(digest)
            keep.add(fid)
    return Corpus(variants=[v for v in corpus.variants if v.function_id in keep])


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

# Per-arch register files.  Renaming permutes within one file, mimicking
# allocation differences between compilers/opt levels.
_REGISTERS = {
    "x86": ["eax", "ebx", "ecx", "edx", "esi", "edi", "r8d", "r9d", "r10d", "r11d"],
    "arm": ["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "r8", "r9"],
    "mips": ["$t0", "$t1", "$t2", "$t3", "$s0", "$s1", "$s2", "$a0", "$a1", "$v0"],
}

# Semantic operation classes with per-arch synonym spellings.  Some spellings
# are shared across arches (as in real ISAs), which is what gives a trained
# model token-level signal on cross-arch pairs.
_OP_CLASSES = {
    "move": {"x86": ["mov", "movl"], "arm": ["mov", "movw"], "mips": ["move", "li"]},
    "load": {"x86": ["mov", "lea"], "arm": ["ldr", "ldrb"], "mips": ["lw", "lb"]},
    "store": {"x86": ["mov", "movb"], "arm": ["str", "strb"], "mips": ["sw", "sb"]},
    "add": {"x86": ["add", "addl"], "arm": ["add", "adds"], "mips": ["addu", "add"]},
    "sub": {"x86": ["sub", "subl"], "arm": ["sub", "subs"], "mips": ["subu", "sub"]},
    "mul": {"x86": ["imul", "mul"], "arm": ["mul", "mla"], "mips": ["mul", "mult"]},
    "and": {"x86": ["and"], "arm": ["and", "ands"], "mips": ["and", "andi"]},
    "or": {"x86": ["or"], "arm": ["orr", "orrs"], "mips": ["or", "ori"]},
    "xor": {"x86": ["xor"], "arm": ["eor", "eors"], "mips": ["xor", "xori"]},
    "shift": {"x86": ["shl", "shr"], "arm": ["lsl", "lsr"], "mips": ["sll", "srl"]},
    "cmp": {"x86": ["cmp", "test"], "arm": ["cmp", "cmn"], "mips": ["slt", "sltu"]},
    "branch": {"x86": ["jne", "je"], "arm": ["bne", "beq"], "mips": ["bne", "beq"]},
    "jump": {"x86": ["jmp"], "arm": ["b"], "mips": ["j"]},
    "call": {"x86": ["call"], "arm": ["bl"], "mips": ["jal"]},
    "ret": {"x86": ["ret"], "arm": ["bx"], "mips": ["jr"]},
    "push": {"x86": ["push"], "arm": ["push"], "mips": ["sw"]},
    "pop": {"x86": ["pop"], "arm": ["pop"], "mips": ["lw"]},
}
_NOP = {"x86": "nop", "arm": "nop", "mips": "nop"}

# Template operand slots: ("reg", slot) fills a register from the variant's
# renaming map; ("imm",) a literal; ("addr", "in"/"out") an address token.
_TEMPLATE_SHAPES = {
    "move": (("reg", 0), ("imm",)),
    "load": (("reg", 0), ("mem", 1)),
    "store": (("mem", 0), ("reg", 1)),
    "add": (("reg", 0), ("reg", 1)),
    "sub": (("reg", 0), ("reg", 1)),
    "mul": (("reg", 0), ("reg", 1)),
    "and": (("reg", 0), ("reg", 1)),
    "or": (("reg", 0), ("reg", 1)),
    "xor": (("reg", 0), ("reg", 1)),
    "shift": (("reg", 0), ("imm",)),
    "cmp": (("reg", 0), ("reg", 1)),
    "branch": (("addr", "in"),),
    "jump": (("addr", "in"),),
    "call": (("addr", "out"),),
    "ret": (),
    "push": (("reg", 0),),
    "pop": (("reg", 0),),
}

_COMPILERS = (("gcc", ("9", "12")), ("clang", ("11", "15")))


def _variant_configs() -> list[tuple[str, int, str, str, str]]:
    configs = []
    for arch in ARCHES:
        for bitness in BITNESSES:
            for compiler, versions in _COMPILERS:
                for version in versions:
                    for opt in OPT_LEVELS:
                        configs.append((arch, bitness, compiler, version, opt))
    return configs


def _make_template(rng: random.Random) -> tuple[list[list[tuple]], list[tuple[int, int]]]:
    """A source function: per-block opclass/slot skeletons plus a random CFG."""
    n_blocks = rng.randint(3, 15)
    classes = list(_OP_CLASSES.keys())
    blocks = []
    for _ in range(n_blocks):
        n_instr = rng.randint(2, 20)
        instrs = []
        for _ in range(n_instr):
            opclass = rng.choice(classes)
            slots = []
            for shape in _TEMPLATE_SHAPES[opclass]:
                if shape[0] in ("reg", "mem"):
                    slots.append((shape[0], rng.randrange(6)))
                else:
                    slots.append(shape)
            instrs.append((opclass, tuple(slots)))
        blocks.append(instrs)
    edges = set()
    for i in range(n_blocks - 1):
        edges.add((i, i + 1))
    for _ in range(rng.randint(1, max(2, n_blocks // 2))):
        edges.add((rng.randrange(n_blocks), rng.randrange(n_blocks)))
    return blocks, sorted(edges)


def _render_variant(
    function_id: str,
    template_blocks: list[list[tuple]],
    template_edges: list[tuple[int, int]],
    config: tuple[str, int, str, str, str],
    rng: random.Random,
    max_splits: int = 2,
) -> FunctionVariant:
    arch, bitness, compiler, version, opt = config
    regs = list(_REGISTERS[arch])
    rng.shuffle(regs)

    def render_instr(opclass: str, slots: tuple) -> RawInstruction:
        op = rng.choice(_OP_CLASSES[opclass][arch])
        tokens = [op]
        in_tags, out_tags = set(), set()
        for slot in slots:
            kind = slot[0]
            if kind == "reg":
                tokens.append(regs[slot[1]])
            elif kind == "mem":
                tokens.append(f"[{regs[slot[1]]}+{rng.randrange(256)}]")
            elif kind == "imm":
                tokens.append(hex(rng.randrange(1 << 12)))
            elif kind == "addr":
                tokens.append(hex(0x400000 + rng.randrange(1 << 16)))
                (in_tags if slot[1] == "in" else out_tags).add(len(tokens) - 1)
        return RawInstruction(
            tokens=tuple(tokens),
            in_address_targets=frozenset(in_tags),
            out_address_targets=frozenset(out_tags),
        )

    rendered: list[list[RawInstruction]] = []
    for instrs in template_blocks:
        block = []
        for opclass, slots in instrs:
            block.append(render_instr(opclass, slots))
            if rng.random() < 0.15:
                block.append(RawInstruction(tokens=(_NOP[arch],)))
        rendered.append(block)

    # Block splitting: cut an oversized block in two and stitch the edge list.
    edges = list(template_edges)
    n_splits = rng.randint(0, max_splits)
    for _ in range(n_splits):
        candidates = [i for i, b in enumerate(rendered) if len(b) >= 4]
        if not candidates:
            break
        target = rng.choice(candidates)
        cut = rng.randint(1, len(rendered[target]) - 1)
        head, tail = rendered[target][:cut], rendered[target][cut:]
        new_index = len(rendered)
        rendered[target] = head
        rendered.append(tail)
        # incoming edges keep hitting the head; outgoing edges now leave the tail
        edges = [((new_index if s == target else s), d) for s, d in edges]
        edges.append((target, new_index))

    blocks = tuple(BasicBlock(tuple(b)) for b in rendered)
    return FunctionVariant(
        function_id=function_id,
        arch=arch,
        bitness=bitness,
        compiler=compiler,
        compiler_version=version,
        opt_level=opt,
        acfg=ACFG(blocks=blocks, edges=tuple(sorted(set(edges)))),
    )


def synth_corpus(n_functions: int, variants_per_function: int, seed: int) -> Corpus:
    """Deterministic pseudo-assembly corpus for desk-scale testing.

    Each source function is a random template; variants re-render it under a
    distinct (arch, bitness, compiler, version, opt) configuration with
    semantics-preserving perturbations: register renaming, NOP insertion,
    literal replacement, mnemonic synonym substitution, and block splitting.
    """
    if n_functions < 1 or variants_per_function < 1:
        raise ValueError("n_functions and variants_per_function must be >= 1")
    all_configs = _variant_configs()
    if variants_per_function > len(all_configs):
        raise ValueError(
            f"at most {len(all_configs)} variants per function (unique metadata keys)"
        )
    variants: list[FunctionVariant] = []
    for f in range(n_functions):
        fid = f"fn_{f:05d}"
        template_rng = random.Random(seed * 1_000_003 + f)
        template_blocks, template_edges = _make_template(template_rng)
        configs = list(all_configs)
        template_rng.shuffle(configs)
        for v in range(variants_per_function):
            variant_rng = random.Random((seed * 1_000_003 + f) * 1_009 + v)
            variants.append(
                _render_variant(fid, template_blocks, template_edges, configs[v], variant_rng)
            )
    return Corpus(variants=variants)
