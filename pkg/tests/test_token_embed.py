import pytest
import torch

from graphmoco.token_embed import TokenEmbeddingTable, embed_instruction, init_tables


class TestEmbedInstruction:
    def test_all_pad_operands_gives_zero_sum(self):
        table = init_tables(5, 7, d=4, seed=0)
        out = embed_instruction(2, (0, 0, 0, 0), table)
        assert torch.equal(out[:4], table.op_table[2])
        assert torch.equal(out[4:], torch.zeros(4))

    def test_operand_order_invariance(self):
        table = init_tables(5, 7, d=4, seed=0)
        a = embed_instruction(2, (3, 5, 0, 0), table)
        b = embed_instruction(2, (5, 3, 0, 0), table)
        assert torch.allclose(a, b)

    def test_hand_case(self):
        # d=2, op row (1,0), operands a=(0.5,0.5), b=(-0.5,1.5) -> (1,0,0,2)
        table = TokenEmbeddingTable(3, 4, d=2)
        with torch.no_grad():
            table.op_table[2] = torch.tensor([1.0, 0.0])
            table.operand_table[2] = torch.tensor([0.5, 0.5])
            table.operand_table[3] = torch.tensor([-0.5, 1.5])
        out = embed_instruction(2, (2, 3, 0, 0), table)
        assert torch.allclose(out, torch.tensor([1.0, 0.0, 0.0, 2.0]))

    def test_output_dimension(self):
        for d in (1, 3, 16):
            table = init_tables(4, 4, d=d, seed=1)
            assert embed_instruction(1, (1, 1, 1, 1), table).shape == (2 * d,)

    def test_out_of_bounds(self):
        table = init_tables(3, 3, d=2, seed=0)
        with pytest.raises(IndexError):
            embed_instruction(3, (0, 0, 0, 0), table)
        with pytest.raises(IndexError):
            embed_instruction(0, (5, 0, 0, 0), table)

    def test_pad_contribution_is_zero_even_with_dirty_row(self):
        # structural masking, not reliance on the zero row
        table = init_tables(3, 3, d=2, seed=0)
        with torch.no_grad():
            table.operand_table[0] = torch.tensor([9.0, 9.0])
        out = embed_instruction(1, (0, 0, 0, 0), table)
        assert torch.equal(out[2:], torch.zeros(2))


class TestInitTables:
    def test_deterministic(self):
        a = init_tables(6, 9, d=5, seed=42)
        b = init_tables(6, 9, d=5, seed=42)
        assert torch.equal(a.op_table, b.op_table)
        assert torch.equal(a.operand_table, b.operand_table)
        c = init_tables(6, 9, d=5, seed=43)
        assert not torch.equal(a.op_table, c.op_table)

    def test_pad_rows_zero(self):
        t = init_tables(6, 9, d=5, seed=1)
        assert t.op_table[0].norm() == 0
        assert t.operand_table[0].norm() == 0

    def test_magnitude_bound(self):
        d = 16
        t = init_tables(10, 10, d=d, seed=3)
        bound = 1.0 / d ** 0.5
        assert t.op_table.abs().max() <= bound
        assert t.operand_table.abs().max() <= bound

    def test_size_validation(self):
        with pytest.raises(ValueError):
            init_tables(1, 5, d=2, seed=0)
        with pytest.raises(ValueError):
            init_tables(5, 5, d=0, seed=0)


def test_pad_row_gets_no_gradient():
    table = init_tables(4, 6, d=3, seed=0)
    op_ids = torch.tensor([1, 2])
    operand_ids = torch.tensor([[2, 3, 0, 0], [0, 0, 0, 0]])
    out = table(op_ids, operand_ids)
    out.sum().backward()
    assert torch.equal(table.operand_table.grad[0], torch.zeros(3))
    assert table.operand_table.grad[2].abs().sum() > 0
