"""Smoke tests for tensor primitives, seeded streams and the gradient checker."""

import pytest
import torch

from cbnlab.errors import NonScalarLossError, ReflectionPadError, ShapeMismatchError
from cbnlab.tensor_core import (
    CHECK_DTYPE,
    KernelBank,
    PRNGState,
    channel_stats,
    conv2d,
    grad_check,
    pad2d,
    transposed_conv2d,
)


def _bank(weight):
    return KernelBank(torch.tensor(weight, dtype=CHECK_DTYPE))


def test_conv2d_scalar_kernel_scales_input():
    x = torch.ones(1, 1, 3, 3, dtype=CHECK_DTYPE)
    out = conv2d(x, _bank([[[[2.0]]]]))
    assert out.shape == (1, 1, 3, 3)
    assert torch.equal(out, torch.full((1, 1, 3, 3), 2.0, dtype=CHECK_DTYPE))


def test_conv2d_delta_kernel_with_reflection_is_identity():
    x = PRNGState(seed=3).normal((2, 1, 5, 5))
    delta = torch.zeros(1, 1, 3, 3, dtype=CHECK_DTYPE)
    delta[0, 0, 1, 1] = 1.0
    out = conv2d(x, KernelBank(delta), 1, "reflection", 1)
    assert torch.equal(out, x)


def test_conv2d_hand_computed_dot_product():
    x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=CHECK_DTYPE)
    out = conv2d(x, KernelBank(torch.ones(1, 1, 2, 2, dtype=CHECK_DTYPE)))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 10.0


def test_conv2d_is_linear():
    rng = PRNGState(seed=5)
    bank = KernelBank.random(4, 3, 3, rng)
    x, u = rng.normal((2, 3, 6, 6)), rng.normal((2, 3, 6, 6))
    lhs = conv2d(1.5 * x - 0.75 * u, bank, 1, "reflection", 1)
    rhs = 1.5 * conv2d(x, bank, 1, "reflection", 1) - 0.75 * conv2d(u, bank, 1, "reflection", 1)
    assert ((lhs - rhs).abs().max() / rhs.abs().max()).item() < 1e-12


def test_conv2d_shape_errors():
    x = torch.zeros(1, 2, 5, 5, dtype=CHECK_DTYPE)
    with pytest.raises(ShapeMismatchError, match="channels"):
        conv2d(x, KernelBank(torch.zeros(1, 3, 3, 3, dtype=CHECK_DTYPE)))
    with pytest.raises(ShapeMismatchError, match="stride"):
        conv2d(x, KernelBank(torch.zeros(1, 2, 2, 2, dtype=CHECK_DTYPE)), stride=2)
    with pytest.raises(ReflectionPadError):
        conv2d(x, KernelBank(torch.zeros(1, 2, 3, 3, dtype=CHECK_DTYPE)), 1, "reflection", 5)


def test_transposed_conv2d_interior_window():
    x = torch.ones(1, 1, 1, 1, dtype=CHECK_DTYPE)
    out = transposed_conv2d(x, KernelBank(torch.ones(1, 1, 4, 4, dtype=CHECK_DTYPE)), 2, 1)
    assert out.shape == (1, 1, 2, 2)
    assert torch.equal(out, torch.ones(1, 1, 2, 2, dtype=CHECK_DTYPE))


def test_transposed_conv2d_is_adjoint_of_conv2d():
    rng = PRNGState(seed=11)
    bank = KernelBank.random(3, 2, 4, rng)
    a = rng.normal((2, 2, 8, 8))
    forward = conv2d(a, bank, 2, "zero", 1)
    b = rng.normal(tuple(forward.shape))
    lhs = (forward * b).sum()
    rhs = (a * transposed_conv2d(b, bank, 2, 1)).sum()
    assert abs((lhs - rhs).item()) / abs(lhs.item()) < 1e-10


def test_transposed_conv2d_zero_input():
    bank = KernelBank.random(2, 3, 3, PRNGState(seed=1))
    out = transposed_conv2d(torch.zeros(1, 2, 4, 4, dtype=CHECK_DTYPE), bank, 1, 1)
    assert out.abs().max().item() == 0.0


def test_reflection_padding_keeps_constant_planes_constant():
    plane = torch.full((1, 2, 4, 4), 3.25, dtype=CHECK_DTYPE)
    padded = pad2d(plane, 2, "reflection")
    assert padded.shape == (1, 2, 8, 8)
    assert (padded.amax(dim=(2, 3)) - padded.amin(dim=(2, 3))).max().item() == 0.0


def test_channel_stats_population_formula():
    mean, std = channel_stats(torch.full((1, 1, 2, 2), 5.0, dtype=CHECK_DTYPE))
    assert mean.item() == 5.0 and std.item() == 0.0

    mean, std = channel_stats(torch.tensor([[[[1.0, 3.0]]]], dtype=CHECK_DTYPE))
    assert mean.item() == 2.0 and std.item() == 1.0

    batch = torch.zeros(2, 1, 2, 2, dtype=CHECK_DTYPE)
    batch[1] = 4.0
    mean, std = channel_stats(batch, "batch")
    assert mean.tolist() == [2.0] and std.tolist() == [2.0]


def test_prng_replay_is_bit_identical():
    a = PRNGState(seed=99)
    b = PRNGState(seed=99)
    assert torch.equal(a.normal((3, 4)), b.normal((3, 4)))
    assert torch.equal(a.child(5).uniform((7,)), b.child(5).uniform((7,)))
    assert not torch.equal(a.child(1).normal((4,)), a.child(2).normal((4,)))


def test_grad_check_linear_and_tanh_conv():
    rng = PRNGState(seed=2)
    x = rng.normal((6,))
    assert grad_check(lambda p: (p["w"] * x).sum(), {"w": rng.normal((6,))}) < 1e-6

    image = rng.normal((1, 2, 5, 5))

    def loss(p):
        return torch.tanh(conv2d(image, KernelBank(p["w"]), 1, "reflection", 1)).sum()

    assert grad_check(loss, {"w": rng.normal((2, 2, 3, 3), std=0.3)}) < 1e-4


def test_grad_check_flags_a_wrong_small_coordinate_next_to_a_large_one():
    w = torch.tensor([0.3, -0.7], dtype=CHECK_DTYPE)

    def detached(p):
        return 1e6 * p["w"][0] + p["w"][1].detach()

    assert grad_check(detached, {"w": w}) > 0.5


def test_grad_check_accepts_zero_gradient_coordinates():
    w = torch.tensor([0.3, -0.7], dtype=CHECK_DTYPE)
    assert grad_check(lambda p: p["w"][0] ** 2, {"w": w}) < 1e-6


def test_grad_check_rejects_non_scalar_loss():
    with pytest.raises(NonScalarLossError):
        grad_check(lambda p: p["w"] * 2.0, {"w": torch.ones(3, dtype=CHECK_DTYPE)})
