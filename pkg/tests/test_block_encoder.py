import math

import pytest
import torch

from graphmoco.block_encoder import StrandCNN, encode_block, init_strand_params


def identity_cnn(windows=(2,), filters=1, d=1):
    return StrandCNN(windows, filters, d, activation="identity")


class TestEncodeBlock:
    def test_hand_convolution_case(self):
        # 2d=2, one filter, h=2, W=((1,0),(0,1)), b=0, identity activation,
        # sequence (1,2),(3,4),(5,6): windows 1*1+1*4=5 and 3+6=9 -> pooled 9
        cnn = identity_cnn()
        with torch.no_grad():
            cnn.weights[0][0] = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        seq = torch.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = encode_block(seq, cnn)
        assert out[0].item() == pytest.approx(9.0)
        # mean part appended after strand features
        assert torch.allclose(out[1:], seq.mean(dim=0))

    def test_single_instruction_block(self):
        # padded to max(H); mean equals the lone instruction embedding exactly
        cnn = init_strand_params((2, 3, 4), 4, d=3, seed=0)
        row = torch.randn(1, 6, generator=torch.Generator().manual_seed(1))
        out = encode_block(row, cnn)
        assert out.shape == (3 * 4 + 6,)
        assert torch.allclose(out[12:], row[0])

    def test_zero_inputs_zero_bias_tanh_gives_zero_strands(self):
        cnn = StrandCNN((2, 3), 5, d=2, activation="tanh")
        with torch.no_grad():
            for w in cnn.weights:
                w.uniform_(-1, 1)
        seq = torch.zeros(6, 4)
        out = encode_block(seq, cnn)
        assert torch.equal(out[: 2 * 5], torch.zeros(10))

    def test_output_width_constant(self):
        cnn = init_strand_params((2, 3, 4), 8, d=4, seed=2)
        for n in (1, 2, 4, 9, 30):
            seq = torch.randn(n, 8, generator=torch.Generator().manual_seed(n))
            assert encode_block(seq, cnn).shape == (3 * 8 + 8,)

    def test_empty_block_rejected(self):
        cnn = init_strand_params((2,), 2, d=1, seed=0)
        with pytest.raises(ValueError):
            encode_block(torch.zeros(0, 2), cnn)

    def test_pooling_monotone_under_append(self):
        # appending an instruction only adds candidate windows; pooled strand
        # features never decrease
        cnn = init_strand_params((2, 3, 4), 6, d=3, seed=5)
        gen = torch.Generator().manual_seed(9)
        for _ in range(10):
            n = int(torch.randint(4, 10, (1,), generator=gen))
            seq = torch.randn(n, 6, generator=gen)
            extra = torch.randn(1, 6, generator=gen)
            before = encode_block(seq, cnn)[: 3 * 6]
            after = encode_block(torch.cat([seq, extra]), cnn)[: 3 * 6]
            assert (after >= before - 1e-6).all()

    def test_zero_append_preserves_earlier_windows(self):
        cnn = init_strand_params((2, 3), 4, d=2, seed=3)
        gen = torch.Generator().manual_seed(4)
        seq = torch.randn(7, 4, generator=gen)  # longer than max(H)
        before = encode_block(seq, cnn)[: 2 * 4]
        after = encode_block(torch.cat([seq, torch.zeros(1, 4)]), cnn)[: 2 * 4]
        assert (after >= before - 1e-6).all()


class TestInit:
    def test_deterministic(self):
        a = init_strand_params((2, 3, 4), 8, d=4, seed=11)
        b = init_strand_params((2, 3, 4), 8, d=4, seed=11)
        for wa, wb in zip(a.weights, b.weights):
            assert torch.equal(wa, wb)
        for ba, bb in zip(a.biases, b.biases):
            assert torch.equal(ba, bb)

    def test_window_cap(self):
        with pytest.raises(ValueError):
            init_strand_params((2, 5), 4, d=2, seed=0)

    def test_magnitude_bound(self):
        d = 4
        cnn = init_strand_params((2, 3, 4), 16, d=d, seed=7)
        for h, w in zip(cnn.windows, cnn.weights):
            bound = 1.0 / math.sqrt(h * 2 * d)
            assert w.abs().max() <= bound

    def test_bad_args(self):
        with pytest.raises(ValueError):
            StrandCNN((), 4, d=2)
        with pytest.raises(ValueError):
            StrandCNN((2,), 0, d=2)
        with pytest.raises(ValueError):
            StrandCNN((2,), 4, d=2, activation="softplus")


def test_gradient_matches_central_differences():
    # analytic gradients of a scalar head vs central differences, float64
    torch.manual_seed(0)
    cnn = init_strand_params((2, 3), 3, d=2, seed=1).double()
    seq = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(2 * 3 + 4, dtype=torch.float64)

    def scalar(s):
        return (encode_block(s, cnn) * probe).sum()

    loss = scalar(seq)
    params = [seq] + list(cnn.parameters())
    grads = torch.autograd.grad(loss, params)
    eps = 1e-5
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            up = scalar(seq.detach().requires_grad_(False)).item()
            flat[idx] = orig - eps
            down = scalar(seq.detach().requires_grad_(False)).item()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            an = g.reshape(-1)[idx].item()
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom < 1e-4, (p.shape, idx, fd, an)
