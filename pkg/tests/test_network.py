import pytest
import torch

from least.errors import InvalidInputError
from least.network import (
    StyleNetwork,
    StyleNetworkSpec,
    init_style_network,
    run_network,
)


class TestSpec:
    def test_default_channels_and_stride(self):
        spec = StyleNetworkSpec()
        assert spec.channels == (16, 32, 64)
        assert spec.stages == 3
        assert spec.stride == 8


class TestStyleNetwork:
    def test_output_shape_matches_input(self):
        net = init_style_network(StyleNetworkSpec(), seed=0)
        img = torch.rand(64, 64, 3, generator=torch.Generator().manual_seed(1))
        out = run_network(net, img)
        assert out.shape == (64, 64, 3)

    def test_output_in_unit_interval(self):
        net = init_style_network(StyleNetworkSpec(), seed=0)
        img = torch.rand(32, 32, 3, generator=torch.Generator().manual_seed(2))
        out = run_network(net, img)
        assert float(out.detach().min()) > 0.0
        assert float(out.detach().max()) < 1.0

    def test_indivisible_resolution_rejected(self):
        net = init_style_network(StyleNetworkSpec(), seed=0)
        with pytest.raises(InvalidInputError):
            run_network(net, torch.rand(30, 30, 3))

    def test_rectangular_input(self):
        net = init_style_network(StyleNetworkSpec(), seed=0)
        out = run_network(net, torch.rand(32, 64, 3))
        assert out.shape == (32, 64, 3)

    def test_gradients_reach_every_parameter(self):
        net = init_style_network(StyleNetworkSpec(), seed=3)
        img = torch.rand(24, 24, 3, generator=torch.Generator().manual_seed(4))
        run_network(net, img).sum().backward()
        for name, param in net.named_parameters():
            assert param.grad is not None, name
            assert param.grad.abs().sum() > 0, name

    def test_uses_instance_norm(self):
        net = StyleNetwork()
        kinds = [type(m) for m in net.modules()]
        assert torch.nn.InstanceNorm2d in kinds
        assert torch.nn.BatchNorm2d not in kinds


class TestInit:
    def test_same_seed_same_weights(self):
        a = init_style_network(StyleNetworkSpec(), seed=7)
        b = init_style_network(StyleNetworkSpec(), seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_different_weights(self):
        a = init_style_network(StyleNetworkSpec(), seed=7)
        b = init_style_network(StyleNetworkSpec(), seed=8)
        assert any(not torch.equal(pa, pb)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_init_does_not_disturb_global_rng(self):
        torch.manual_seed(123)
        before = torch.rand(4)
        torch.manual_seed(123)
        init_style_network(StyleNetworkSpec(), seed=55)
        after = torch.rand(4)
        assert torch.equal(before, after)
