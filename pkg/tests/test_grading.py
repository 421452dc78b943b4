import numpy as np
import pytest
import torch

from drbench.data import LesionDensity, PhantomSpec, grading_phantom_spec, synthesize_phantom
from drbench.data.tensors import images_tensor
from drbench.errors import InvalidSpec, MissingLabels, UnsupportedArchitecture
from drbench.grading import (
    GradeModelConfig,
    build_grading_model,
    cam_from_features,
    class_activation_map,
    evaluate_grading,
    fuse_lesion_inputs,
    grading_report,
    load_grading_checkpoint,
    predict_grades,
    save_grading_checkpoint,
    train_grading,
)
from drbench.segnet import SegModel, SegModelConfig, build_segmentation_model
from drbench.training import TrainConfig, state_equal


class ZeroSeg(SegModel):
    def __init__(self, size=64):
        super().__init__()
        self.config = SegModelConfig("multiclass", 2, 8, input_size=size, out_channels=6)
        self.w = torch.nn.Parameter(torch.zeros(()))

    def forward_logits(self, x):
        return torch.full((len(x), 6, *x.shape[-2:]), -1e4)

    def bottleneck(self, x):
        return torch.zeros(len(x), 5, 2, 2)

    @property
    def vector_size(self):
        return 5


@pytest.fixture(scope="module")
def phantom():
    ds, _ = synthesize_phantom(grading_phantom_spec(16, 64, seed=7, lm_rate=0.3, pm_rate=0.3))
    return ds


class TestModels:
    @pytest.mark.parametrize("backbone", ["small-cnn", "dense-backbone"])
    def test_logits_and_aux(self, backbone):
        model = build_grading_model(GradeModelConfig(backbone=backbone, aux_heads=True, input_size=128))
        logits, aux = model(torch.rand(2, 3, 128, 128))
        assert logits.shape == (2, 5)
        probs = torch.sigmoid(aux)
        assert probs.shape == (2, 2) and ((probs >= 0) & (probs <= 1)).all()

    def test_seeded_init(self):
        cfg = GradeModelConfig(backbone="dense-backbone")
        assert state_equal(build_grading_model(cfg, seed=2), build_grading_model(cfg, seed=2))

    def test_fusion_needs_seg_model(self):
        with pytest.raises(InvalidSpec):
            build_grading_model(GradeModelConfig(fusion="lesion-mask-concat"))

    def test_mask_concat_with_zero_maps(self):
        x, vec = fuse_lesion_inputs(torch.rand(2, 3, 64, 64), ZeroSeg(), "lesion-mask-concat")
        assert x.shape == (2, 9, 64, 64) and vec is None
        assert x[:, 3:].abs().max() == 0

    def test_feature_concat_dims_add(self):
        model = build_grading_model(GradeModelConfig(fusion="lesion-feature-concat"), ZeroSeg())
        assert model.head.in_features == model.feature_dim + 5
        assert model(torch.rand(2, 3, 64, 64))[0].shape == (2, 5)

    def test_resolution_bridging(self):
        seg = build_segmentation_model(SegModelConfig("multiclass", 2, 8, input_size=32, out_channels=6))
        x, _ = fuse_lesion_inputs(torch.rand(1, 3, 64, 64), seg, "lesion-mask-concat")
        assert x.shape == (1, 9, 64, 64)

    def test_seg_model_stays_frozen(self, phantom):
        seg = build_segmentation_model(SegModelConfig("multiclass", 2, 8, input_size=64, out_channels=6))
        before = {k: v.clone() for k, v in seg.state_dict().items()}
        model = build_grading_model(GradeModelConfig(fusion="lesion-mask-concat"), seg)
        train_grading(model, phantom, TrainConfig(epochs=1, batch_size=8))
        assert all(torch.equal(before[k], v) for k, v in seg.state_dict().items())


class TestTraining:
    def test_zero_epochs(self, phantom):
        a = build_grading_model(GradeModelConfig())
        b = build_grading_model(GradeModelConfig())
        train_grading(a, phantom, TrainConfig(epochs=0))
        assert state_equal(a, b)

    def test_zero_aux_weight_matches_aux_free_model(self, phantom):
        cfg = TrainConfig(epochs=3, batch_size=4)
        plain = build_grading_model(GradeModelConfig(aux_heads=False), seed=1)
        aux = build_grading_model(GradeModelConfig(aux_heads=True), seed=1)
        train_grading(plain, phantom, cfg, lm_pm_weight=0.0)
        train_grading(aux, phantom, cfg, lm_pm_weight=0.0)
        sa = aux.state_dict()
        assert all(torch.equal(v, sa[k]) for k, v in plain.state_dict().items())

    def test_loss_descends(self, phantom):
        _, hist = train_grading(build_grading_model(GradeModelConfig()), phantom,
                                TrainConfig(epochs=30, batch_size=8, learning_rate=3e-3))
        assert hist.losses[-1] < hist.losses[0]

    def test_missing_grades(self, phantom):
        s = phantom.subset([0])
        s.samples[0] = type(s.samples[0])(s.samples[0].id, s.samples[0].image)
        with pytest.raises(MissingLabels):
            train_grading(build_grading_model(GradeModelConfig()), s, TrainConfig(epochs=1))

    def test_checkpoint_round_trip(self, tmp_path):
        model = build_grading_model(GradeModelConfig(aux_heads=True), seed=3)
        back = load_grading_checkpoint(save_grading_checkpoint(tmp_path / "g.pt", model))
        assert state_equal(model, back)


class TestEvaluation:
    def test_perfect(self):
        gt = [0, 1, 2, 3, 4, 4, 2]
        rep = grading_report(gt, gt)
        assert rep.metrics["all"] == {"accuracy": 1.0, "qw_kappa": 1.0}

    def test_constant_grade_two(self):
        gt = [g for g in range(5) for _ in range(4)]
        rep = grading_report([2] * len(gt), gt)
        assert rep.metrics["all"]["accuracy"] == 0.2
        assert abs(rep.metrics["all"]["qw_kappa"]) < 1e-12

    def test_confusion_rows(self, phantom):
        rep = evaluate_grading(build_grading_model(GradeModelConfig()), phantom)
        counts = np.bincount([s.grade for s in phantom], minlength=5)
        assert rep.confusion.sum(axis=1).tolist() == counts.tolist()
        assert len(predict_grades(build_grading_model(GradeModelConfig()), phantom)) == len(phantom)


class TestCam:
    def test_uniform_features(self):
        cam = cam_from_features(torch.ones(3, 4, 4), torch.tensor([1.0, -2.0, 0.5]))
        assert torch.equal(cam, torch.zeros(4, 4))

    def test_single_hot_channel(self):
        f = torch.zeros(2, 6, 6)
        f[1, 2, 4] = 3.0
        cam = cam_from_features(f, torch.tensor([0.3, 1.0]))
        assert divmod(int(cam.argmax()), 6) == (2, 4) and cam.max() == 1.0

    def test_unsupported(self):
        with pytest.raises(UnsupportedArchitecture):
            class_activation_map(torch.nn.Linear(2, 2), torch.rand(3, 8, 8), 0)
        with pytest.raises(UnsupportedArchitecture):
            class_activation_map(build_grading_model(GradeModelConfig()), torch.rand(3, 64, 64), "PM")

    def test_localizes_planted_membrane(self):
        spec = PhantomSpec(48, 64, {"MA": LesionDensity(1, 3, 1, 2)}, seed=5, pm_rate=0.5)
        ds, log = synthesize_phantom(spec)
        model = build_grading_model(GradeModelConfig(aux_heads=True), seed=0)
        train_grading(model, ds, TrainConfig(epochs=30, batch_size=8, learning_rate=3e-3), lm_pm_weight=1.0)
        hits = total = 0
        for s in ds:
            planted = [r for r in log.for_image(s.id) if r.kind == "PM"]
            if not planted:
                continue
            r = planted[0]
            cam = class_activation_map(model, images_tensor([s], 64)[0], "PM")
            assert cam.shape == (64, 64) and cam.min() >= 0 and cam.max() <= 1
            py, px = divmod(int(np.argmax(cam)), 64)
            total += 1
            hits += abs(py - r.cy) <= r.radius + 2 and abs(px - r.cx) <= r.radius + 2
        assert total > 10 and hits >= 0.75 * total
