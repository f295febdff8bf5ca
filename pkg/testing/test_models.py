import unittest

import torch

from isac_detect.errors import ConfigError
from isac_detect.models import (MICRO_ARCHITECTURE, TOY_ARCHITECTURE, HeatmapConvNet,
                                MicroConvNet, build_model)
from .utils import requires_float64


class TestHeatmapConvNet(unittest.TestCase):
    def test_output_shape(self):
        model = build_model(TOY_ARCHITECTURE)
        x = torch.randn(3, 6, 64, 48)
        h = model(x)
        assert h.shape == (3, 64, 48)
        assert torch.all((h >= 0) & (h <= 1))
        assert model.architecture == TOY_ARCHITECTURE

    def test_input_checks(self):
        model = build_model(TOY_ARCHITECTURE)
        with self.assertRaises(ConfigError):
            model(torch.randn(1, 4, 32, 32))
        with self.assertRaises(ConfigError):
            model(torch.randn(6, 32, 32))
        with self.assertRaises(ConfigError):
            model(torch.randn(1, 6, 2, 32))

    def test_architecture_errors(self):
        with self.assertRaises(ConfigError):
            HeatmapConvNet((6, 8, 1), (1,))
        with self.assertRaises(ConfigError):
            HeatmapConvNet((6, 8, 2), (1, 1))
        with self.assertRaises(ConfigError):
            HeatmapConvNet((6, 8, 1), (1, 1), kernel_size=4)
        with self.assertRaises(ConfigError):
            build_model({"channels": [6, 1]})

    def test_zero_head(self):
        model = HeatmapConvNet(zero_head=True)
        with torch.no_grad():
            model.net[-1].bias.fill_(0.)
        h = model(torch.randn(2, 6, 16, 16))
        assert torch.allclose(h, torch.full_like(h, 0.5))

    def test_loss(self):
        torch.manual_seed(0)
        model = build_model(TOY_ARCHITECTURE)
        x = torch.randn(2, 6, 16, 16)
        target = torch.rand(2, 16, 16)
        loss = model.loss(x, target)
        expected = torch.nn.functional.binary_cross_entropy(model(x), target)
        assert torch.allclose(loss, expected, atol=1e-5)


class TestMicroConvNet(unittest.TestCase):
    @requires_float64
    def test_gradcheck(self):
        torch.manual_seed(1)
        model = MicroConvNet()
        assert model.architecture == MICRO_ARCHITECTURE
        x = torch.randn(1, 2, 8, 8, requires_grad=True)
        target = torch.rand(1, 8, 8)
        assert torch.autograd.gradcheck(model, (x,), eps=1e-6, atol=1e-5)
        assert torch.autograd.gradcheck(lambda x: model.loss(x, target), (x,),
                                        eps=1e-6, atol=1e-5)

    def test_min_size(self):
        model = MicroConvNet()
        assert model.min_size == 2
        with self.assertRaises(ConfigError):
            model(torch.randn(1, 2, 1, 8))

    @requires_float64
    def test_parameter_gradients(self):
        torch.manual_seed(2)
        model = MicroConvNet()
        x = torch.randn(2, 2, 8, 8)
        target = torch.rand(2, 8, 8)
        model.zero_grad()
        model.loss(x, target).backward()
        eps = 1e-6
        with torch.no_grad():
            for p in model.parameters():
                flat = p.view(-1)
                for n in range(flat.numel()):
                    flat[n] += eps
                    plus = model.loss(x, target).item()
                    flat[n] -= 2*eps
                    minus = model.loss(x, target).item()
                    flat[n] += eps
                    fd = (plus - minus) / (2*eps)
                    assert abs(p.grad.view(-1)[n].item() - fd) <= 1e-7 + 1e-4*abs(fd)


class TestEquivariance(unittest.TestCase):
    def test_translation(self):
        torch.manual_seed(3)
        model = build_model(TOY_ARCHITECTURE)
        i, j = torch.arange(96.)[:, None], torch.arange(64.)[None, :]
        blob = torch.exp(-((i - 40)**2 + (j - 26)**2) / 8)
        x = blob.expand(1, 6, 96, 64).clone()
        with torch.no_grad():
            background = model.logits(torch.zeros_like(x))
            response = (model.logits(x) - background).abs()[0]
            shifted = (model.logits(torch.roll(x, (8, 8), dims=(2, 3))) - background).abs()[0]
        q0, m0 = divmod(int(torch.argmax(response)), 64)
        q1, m1 = divmod(int(torch.argmax(shifted)), 64)
        assert abs(q1 - q0 - 8) <= 1
        assert abs(m1 - m0 - 8) <= 1
