import numpy as np
import pytest
import torch
import torch.nn.functional as F
from PIL import Image

import oracles
from drbench.data import Dataset, LESIONS, seg_phantom_spec, synthesize_phantom
from drbench.data.tensors import images_tensor, masks_tensor
from drbench.errors import InvalidSpec, ShapeMismatch
from drbench.metrics import binarize
from drbench.segnet import (
    AttentionGate,
    SegModel,
    SegModelConfig,
    build_segmentation_model,
    evaluate_segmentation,
    export_masks,
    load_checkpoint,
    save_checkpoint,
    seg_loss,
    segmentation_report,
    train_segmentation,
)
from drbench.training import TrainConfig, state_equal


# per-image mean EX Dice of an untrained plain U-Net (seed 0) on the 4-image fixture
UNTRAINED_EX_DICE = 0.25


class ConstantModel(SegModel):
    """Outputs fixed probability maps, or the ground truth when given one."""

    def __init__(self, maps: torch.Tensor, channels=1, size=64):
        super().__init__()
        self.config = SegModelConfig("multiclass" if channels == 6 else "plain", 3, 8, input_size=size,
                                     out_channels=channels)
        self.maps = maps
        self.dummy = torch.nn.Parameter(torch.zeros(()))

    def forward(self, x):
        return self.maps[: len(x)]

    def forward_logits(self, x):
        return torch.logit(self.forward(x))


@pytest.fixture(scope="module")
def phantom():
    ds, _ = synthesize_phantom(seg_phantom_spec(4, 64, seed=2))
    return ds


class TestModels:
    @pytest.mark.parametrize("variant, out", [("plain", 1), ("attention", 1), ("multiclass", 6), ("dense", 1), ("dense", 6)])
    def test_shapes_and_range(self, variant, out):
        model = build_segmentation_model(SegModelConfig(variant, depth=2, base_channels=8, input_size=64, out_channels=out))
        y = model(torch.rand(2, 3, 64, 64))
        assert y.shape == (2, out, 64, 64)
        assert ((y >= 0) & (y <= 1)).all()

    @pytest.mark.parametrize("size", [32, 48, 96])
    def test_spatial_size_preserved(self, size):
        model = build_segmentation_model(SegModelConfig("dense", depth=3, input_size=size))
        assert model(torch.rand(1, 3, size, size)).shape[-2:] == (size, size)

    def test_seeded_init(self):
        cfg = SegModelConfig("attention", depth=2, input_size=64)
        assert state_equal(build_segmentation_model(cfg, 5), build_segmentation_model(cfg, 5))
        assert not state_equal(build_segmentation_model(cfg, 5), build_segmentation_model(cfg, 6))

    def test_invalid_configs(self):
        for cfg in (
            SegModelConfig("vnet"),
            SegModelConfig("multiclass", out_channels=1),
            SegModelConfig("plain", out_channels=6),
            SegModelConfig("plain", depth=3, input_size=100),
        ):
            with pytest.raises(InvalidSpec):
                build_segmentation_model(cfg)

    def test_dense_has_extra_non_pooling_transition(self):
        model = build_segmentation_model(SegModelConfig("dense", depth=3, input_size=64))
        _, pyramid, bott = model.encode(torch.rand(1, 3, 64, 64))
        assert bott.shape[-1] == pyramid[-1].shape[-1] == 8
        assert bott.shape[1] == model.vector_size


class TestAttentionGate:
    def _gate(self):
        torch.manual_seed(0)
        return AttentionGate(4, 6, 3)

    def test_field_all_ones_is_identity(self):
        gate = self._gate()
        with torch.no_grad():
            gate.psi.weight.zero_()
            gate.psi.bias.fill_(50.0)
        skip = torch.randn(2, 4, 8, 8)
        assert torch.allclose(gate(skip, torch.randn(2, 6, 4, 4)), skip)

    def test_field_all_zeros(self):
        gate = self._gate()
        with torch.no_grad():
            gate.psi.weight.zero_()
            gate.psi.bias.fill_(-200.0)
        assert gate(torch.randn(2, 4, 8, 8), torch.randn(2, 6, 4, 4)).abs().max() == 0

    def test_output_bounded_by_skip(self):
        gate = self._gate()
        skip = torch.randn(3, 4, 16, 16) * 5
        out = gate(skip, torch.randn(3, 6, 8, 8))
        assert (out.abs() <= skip.abs()).all()

    def test_gating_grid_mismatch(self):
        with pytest.raises(ShapeMismatch):
            self._gate()(torch.randn(1, 4, 8, 8), torch.randn(1, 6, 3, 3))


class TestLoss:
    def test_saturated_prediction(self):
        gt = (torch.rand(1, 1, 4, 4) > 0.5).float()
        assert seg_loss(gt.clone(), gt, pos_weight=3.0).item() < 1e-5

    def test_plain_bce_reduction(self):
        p = torch.rand(2, 1, 4, 4).clamp(0.05, 0.95)
        gt = (torch.rand(2, 1, 4, 4) > 0.5).float()
        assert seg_loss(p, gt, 1.0, 0.0).item() == pytest.approx(F.binary_cross_entropy(p, gt).item(), rel=1e-6)

    def test_gradient_matches_central_difference(self):
        g = torch.Generator().manual_seed(3)
        p0 = torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64) * 0.8 + 0.1
        gt = (torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64) > 0.5).double()

        def f(arr):
            return seg_loss(torch.from_numpy(arr), gt, 4.0, 1.0).item()

        p = p0.clone().requires_grad_(True)
        seg_loss(p, gt, 4.0, 1.0).backward()
        numeric = oracles.central_difference(f, p0.numpy().copy())
        rel = np.abs(p.grad.numpy() - numeric) / np.maximum(np.abs(numeric), 1e-12)
        assert rel.max() <= 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            seg_loss(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 2, 2))


class TestTraining:
    def test_zero_epochs(self, phantom):
        cfg = SegModelConfig("plain", depth=2, input_size=64)
        a, b = build_segmentation_model(cfg), build_segmentation_model(cfg)
        train_segmentation(a, phantom, "EX", TrainConfig(epochs=0))
        assert state_equal(a, b)

    def test_bitwise_reproducible_and_descends(self, phantom):
        cfg = SegModelConfig("multiclass", depth=2, input_size=64, out_channels=6)
        tc = TrainConfig(epochs=6, batch_size=2, learning_rate=3e-3)
        a, ha = train_segmentation(build_segmentation_model(cfg), phantom, "all", tc)
        b, hb = train_segmentation(build_segmentation_model(cfg), phantom, "all", tc)
        assert state_equal(a, b) and ha.rows == hb.rows
        assert ha.losses[-1] < ha.losses[0]

    def test_channel_mismatch(self, phantom):
        model = build_segmentation_model(SegModelConfig("plain", depth=2, input_size=64))
        with pytest.raises(InvalidSpec):
            train_segmentation(model, phantom, "all", TrainConfig(epochs=1))

    def test_checkpoint_round_trip(self, tmp_path):
        model = build_segmentation_model(SegModelConfig("dense", depth=2, input_size=64), seed=4)
        back = load_checkpoint(save_checkpoint(tmp_path / "m.pt", model))
        assert state_equal(model, back) and back.seed == 4


class TestEvaluation:
    def test_ground_truth_model(self, phantom):
        gt = masks_tensor(phantom.samples, ("EX",), 64)
        rep = evaluate_segmentation(ConstantModel(gt), phantom, "EX")
        assert rep.metrics["EX"]["dice"] == 1.0 and rep.metrics["EX"]["mae"] == 0.0

    def test_constant_half(self, phantom):
        rep = evaluate_segmentation(ConstantModel(torch.full((4, 1, 64, 64), 0.5)), phantom, "MA")
        assert rep.metrics["MA"]["mae"] == 0.5
        assert rep.metrics["MA"]["auc_roc"] == 0.5

    def test_untrained_regression_floor(self, phantom):
        # measured once on this fixture; a trained model must beat it
        model = build_segmentation_model(SegModelConfig("plain", depth=2, input_size=64), seed=0)
        rep = evaluate_segmentation(model, phantom, "EX")
        assert rep.metrics["EX"]["dice"] == pytest.approx(UNTRAINED_EX_DICE, abs=1e-6)

    def test_channel_permutation_invariance(self, phantom):
        rng = np.random.default_rng(0)
        gts = masks_tensor(phantom.samples, LESIONS, 64).numpy().astype(bool)
        probs = np.clip(gts * 0.7 + rng.random(gts.shape) * 0.5, 0, 1)
        perm = [3, 0, 5, 1, 4, 2]
        lesions = list(LESIONS)
        a = segmentation_report(probs, gts, lesions)
        b = segmentation_report(probs[:, perm], gts[:, perm], [lesions[i] for i in perm])
        assert a.metrics == {k: b.metrics[k] for k in a.metrics}


class TestExport:
    def _model(self, value):
        return ConstantModel(torch.full((4, 6, 64, 64), value), channels=6)

    def test_threshold_one_gives_empty(self, phantom, tmp_path):
        export_masks(self._model(0.99), phantom, tmp_path, threshold=1.0)
        assert all(np.asarray(Image.open(p)).max() == 0 for p in (tmp_path / "MA").glob("*.png"))

    def test_threshold_zero_gives_full(self, phantom, tmp_path):
        export_masks(self._model(0.01), phantom, tmp_path, threshold=0.0)
        assert all(np.asarray(Image.open(p)).min() == 255 for p in (tmp_path / "HE").glob("*.png"))

    def test_round_trip(self, phantom, tmp_path):
        g = torch.Generator().manual_seed(0)
        maps = torch.rand(4, 6, 64, 64, generator=g)
        export_masks(ConstantModel(maps, channels=6), phantom, tmp_path)
        for i, s in enumerate(phantom):
            back = np.asarray(Image.open(tmp_path / "EX" / f"{s.id}.png")) > 0
            assert np.array_equal(back, binarize(maps[i, 2].numpy(), 0.25))
        assert len(list((tmp_path / "overlay").glob("*.png"))) == 4
