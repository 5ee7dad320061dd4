import json
import random
from collections import Counter

import pytest

from graphmoco.corpus import (
    ACFG,
    BasicBlock,
    Corpus,
    CorpusFormatError,
    DuplicateVariantError,
    FunctionVariant,
    InfeasibleSplitError,
    RawInstruction,
    dedup_identical_groups,
    eligible_training_ids,
    load_corpus,
    sample_positive_pair,
    save_corpus,
    split_corpus,
    synth_corpus,
)


def make_variant(fid="f", arch="x86", bitness=64, compiler="gcc", version="9", opt="O0"):
    block = BasicBlock((RawInstruction(tokens=("mov", "eax", "0x10")),))
    return FunctionVariant(
        function_id=fid,
        arch=arch,
        bitness=bitness,
        compiler=compiler,
        compiler_version=version,
        opt_level=opt,
        acfg=ACFG(blocks=(block,), edges=((0, 0),)),
    )


class TestTypes:
    def test_instruction_needs_tokens(self):
        with pytest.raises(ValueError):
            RawInstruction(tokens=())

    def test_address_sets_disjoint(self):
        with pytest.raises(ValueError):
            RawInstruction(
                tokens=("bl", "0x10"),
                in_address_targets=frozenset({1}),
                out_address_targets=frozenset({1}),
            )

    def test_address_index_bounds(self):
        with pytest.raises(ValueError):
            RawInstruction(tokens=("bl", "0x10"), in_address_targets=frozenset({5}))

    def test_empty_block_rejected(self):
        with pytest.raises(ValueError):
            BasicBlock(())

    def test_acfg_edge_bounds(self):
        block = BasicBlock((RawInstruction(tokens=("nop",)),))
        with pytest.raises(ValueError):
            ACFG(blocks=(block,), edges=((0, 1),))

    def test_acfg_collapses_duplicate_edges_keeps_self_loops(self):
        block = BasicBlock((RawInstruction(tokens=("nop",)),))
        acfg = ACFG(blocks=(block, block), edges=((0, 1), (0, 1), (1, 1)))
        assert acfg.edges == ((0, 1), (1, 1))

    def test_variant_validates_metadata(self):
        with pytest.raises(ValueError):
            make_variant(arch="sparc")
        with pytest.raises(ValueError):
            make_variant(opt="O7")

    def test_groups_partition_variants(self):
        corpus = synth_corpus(7, 3, seed=1)
        assert sum(len(idx) for idx in corpus.groups.values()) == len(corpus.variants)
        seen = set()
        for fid, idxs in corpus.groups.items():
            for i in idxs:
                assert corpus.variants[i].function_id == fid
                assert i not in seen
                seen.add(i)


class TestLoadSave:
    def test_round_trip(self, tmp_path):
        corpus = synth_corpus(4, 2, seed=5)
        path = tmp_path / "c.jsonl"
        save_corpus(corpus, path)
        loaded = load_corpus(path)
        assert len(loaded) == len(corpus)
        assert [v.key for v in loaded.variants] == [v.key for v in corpus.variants]
        assert loaded.fingerprint() == corpus.fingerprint()

    def test_two_variants_one_group(self, tmp_path):
        a = make_variant(opt="O0")
        b = make_variant(opt="O1")
        path = tmp_path / "c.jsonl"
        save_corpus(Corpus(variants=[a, b]), path)
        loaded = load_corpus(path)
        assert len(loaded.groups) == 1
        assert len(loaded.groups["f"]) == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        loaded = load_corpus(path)
        assert len(loaded) == 0
        assert len(loaded.groups) == 0

    def test_missing_edges_field_names_line(self, tmp_path):
        record = {
            "function_id": "f",
            "arch": "x86",
            "bitness": 64,
            "compiler": "gcc",
            "compiler_version": "9",
            "opt_level": "O0",
            "blocks": [[["nop"]]],
        }
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusFormatError, match=r":1:"):
            load_corpus(path)

    def test_malformed_json_names_line(self, tmp_path):
        good = json.dumps(
            {
                "function_id": "f",
                "arch": "x86",
                "bitness": 64,
                "compiler": "gcc",
                "compiler_version": "9",
                "opt_level": "O0",
                "blocks": [[["nop"]]],
                "edges": [],
            }
        )
        path = tmp_path / "bad.jsonl"
        path.write_text(good + "\n{not json\n")
        with pytest.raises(CorpusFormatError, match=r":2:"):
            load_corpus(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        save_corpus(Corpus(variants=[make_variant()]), path)
        line = path.read_text()
        path.write_text(line + line)
        with pytest.raises(DuplicateVariantError):
            load_corpus(path)

    def test_addr_tags_round_trip(self, tmp_path):
        instr = RawInstruction(
            tokens=("bl", "0x4008f0"), out_address_targets=frozenset({1})
        )
        v = FunctionVariant(
            function_id="g",
            arch="arm",
            bitness=32,
            compiler="gcc",
            compiler_version="9",
            opt_level="O2",
            acfg=ACFG(blocks=(BasicBlock((instr,)),), edges=()),
        )
        path = tmp_path / "tags.jsonl"
        save_corpus(Corpus(variants=[v]), path)
        loaded = load_corpus(path)
        assert loaded.variants[0].acfg.blocks[0].instructions[0].out_address_targets == frozenset({1})


class TestSplit:
    def test_ratio_allocation(self):
        corpus = synth_corpus(10, 2, seed=3)
        train, val, test = split_corpus(corpus, (0.8, 0.1, 0.1), seed=7)
        assert (len(train.groups), len(val.groups), len(test.groups)) == (8, 1, 1)

    def test_disjoint_by_function(self):
        corpus = synth_corpus(12, 3, seed=3)
        train, val, test = split_corpus(corpus, (0.5, 0.25, 0.25), seed=1)
        ids = [set(c.groups) for c in (train, val, test)]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
        assert ids[0] | ids[1] | ids[2] == set(corpus.groups)

    def test_deterministic(self):
        corpus = synth_corpus(10, 2, seed=3)
        a = split_corpus(corpus, (0.8, 0.1, 0.1), seed=7)
        b = split_corpus(corpus, (0.8, 0.1, 0.1), seed=7)
        for x, y in zip(a, b):
            assert sorted(x.groups) == sorted(y.groups)

    def test_infeasible(self):
        corpus = synth_corpus(2, 2, seed=0)
        with pytest.raises(InfeasibleSplitError):
            split_corpus(corpus, (0.4, 0.3, 0.3), seed=0)

    def test_bad_ratios(self):
        corpus = synth_corpus(5, 2, seed=0)
        with pytest.raises(ValueError):
            split_corpus(corpus, (0.5, 0.5, 0.5), seed=0)


class TestPositivePairs:
    def test_two_member_group_outcomes(self):
        a = make_variant(opt="O0")
        b = make_variant(opt="O1")
        corpus = Corpus(variants=[a, b])
        rng = random.Random(0)
        outcomes = {tuple(v.key for v in sample_positive_pair(corpus, "f", rng)) for _ in range(50)}
        assert outcomes == {(a.key, b.key), (b.key, a.key)}

    def test_self_pair_policy(self):
        corpus = Corpus(variants=[make_variant()])
        rng = random.Random(0)
        with pytest.raises(ValueError):
            sample_positive_pair(corpus, "f", rng)
        x, y = sample_positive_pair(corpus, "f", rng, allow_self_pair=True)
        assert x.key == y.key

    def test_unknown_function(self):
        corpus = Corpus(variants=[make_variant()])
        with pytest.raises(KeyError):
            sample_positive_pair(corpus, "nope", random.Random(0))

    def test_unordered_pair_frequencies_uniform(self):
        # group {A,B,C}: each unordered pair should appear 1/3 +- 0.02
        variants = [make_variant(opt=o) for o in ("O0", "O1", "O2")]
        corpus = Corpus(variants=variants)
        rng = random.Random(42)
        counts = Counter()
        n = 10_000
        for _ in range(n):
            x, y = sample_positive_pair(corpus, "f", rng)
            counts[frozenset((x.opt_level, y.opt_level))] += 1
        assert len(counts) == 3
        for pair, c in counts.items():
            assert abs(c / n - 1 / 3) < 0.02, (pair, c / n)

    def test_pairs_share_function_never_full_key(self):
        corpus = synth_corpus(5, 4, seed=9)
        rng = random.Random(1)
        for fid in corpus.groups:
            for _ in range(20):
                x, y = sample_positive_pair(corpus, fid, rng)
                assert x.function_id == y.function_id == fid
                assert x.key != y.key


class TestSynth:
    def test_minimal(self):
        corpus = synth_corpus(1, 1, seed=0)
        assert len(corpus) == 1
        assert len(corpus.groups) == 1

    def test_deterministic_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_corpus(synth_corpus(6, 3, seed=11), p1)
        save_corpus(synth_corpus(6, 3, seed=11), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a = synth_corpus(3, 2, seed=1)
        b = synth_corpus(3, 2, seed=2)
        assert a.fingerprint() != b.fingerprint()

    def test_scale_and_variation(self):
        corpus = synth_corpus(50, 4, seed=3)
        assert len(corpus) == 200
        for fid, idxs in corpus.groups.items():
            members = [corpus.variants[i] for i in idxs]
            keys = {m.key for m in members}
            assert len(keys) == 4
            # textual difference between sibling variants
            texts = {
                tuple(tuple(i.tokens) for b in m.acfg.blocks for i in b.instructions)
                for m in members
            }
            assert len(texts) == 4
            # block splitting is bounded, so block counts stay within the bound
            counts = [len(m.acfg.blocks) for m in members]
            assert max(counts) - min(counts) <= 2
            assert min(counts) >= 3

    def test_bad_args(self):
        with pytest.raises(ValueError):
            synth_corpus(0, 1, seed=0)
        with pytest.raises(ValueError):
            synth_corpus(1, 0, seed=0)


def test_eligible_ids_respects_policy():
    corpus = Corpus(variants=[make_variant(), make_variant(fid="g", opt="O0"), make_variant(fid="g", opt="O1")])
    assert eligible_training_ids(corpus) == ["g"]
    assert eligible_training_ids(corpus, allow_self_pair=True) == ["f", "g"]


def test_dedup_identical_groups():
    a0 = make_variant(fid="a", opt="O0")
    a1 = make_variant(fid="a", opt="O1")
    b0 = make_variant(fid="b", opt="O0")
    b1 = make_variant(fid="b", opt="O1")
    corpus = Corpus(variants=[a0, a1, b0, b1])
    deduped = dedup_identical_groups(corpus)
    assert sorted(deduped.groups) == ["a"]
    # distinct content survives
    c = synth_corpus(4, 2, seed=1)
    assert sorted(dedup_identical_groups(c).groups) == sorted(c.groups)
