import dataclasses
import hashlib

import numpy as np
import pytest

from braincsvm import csvm, evaltune, imgio, pipeline, synthetic
from braincsvm.errors import FormatError, InvalidArgumentError


def fixture_samples(per_class=20, seed=0):
    return [pipeline.Sample(img, label, name) for img, label, name in synthetic.phantom_set(per_class, seed=seed)]


def write_tree(root, counts, size=4):
    rng = np.random.default_rng(0)
    for label, n in counts.items():
        d = root / label
        d.mkdir(parents=True)
        for i in range(n):
            imgio.write_pgm(d / f"{i:04d}.pgm", rng.integers(0, 256, (size, size), dtype=np.uint8))


FAST = pipeline.PipelineConfig(epochs=1, seed=0)


@pytest.fixture(scope="module")
def fitted():
    return pipeline.fit(fixture_samples(), FAST)


class TestIngest:
    def test_small_tree(self, tmp_path):
        write_tree(tmp_path, {"normal": 3, "benign": 3, "malignant": 3})
        samples = pipeline.ingest(tmp_path)
        assert len(samples) == 9
        assert [s.label for s in samples] == ["normal"] * 3 + ["benign"] * 3 + ["malignant"] * 3
        assert samples[0].id == "normal/0000.pgm"

    def test_full_size_tree(self, tmp_path):
        write_tree(tmp_path, {"normal": 130, "benign": 271, "malignant": 257}, size=2)
        samples = pipeline.ingest(tmp_path)
        labels = [s.label for s in samples]
        assert len(samples) == 658
        assert labels.count("normal") == 130
        assert labels.count("benign") + labels.count("malignant") == 528
        train, test = pipeline.split(samples, 0.8, seed=0)
        assert abs(len(train) - 526) <= 1 and abs(len(test) - 132) <= 1
        assert len(train) + len(test) == 658

    def test_lexicographic_and_png(self, tmp_path):
        write_tree(tmp_path, {"normal": 1, "benign": 1, "malignant": 1})
        imgio.write_png(tmp_path / "normal" / "a.png", np.zeros((3, 3), np.uint8))
        ids = [s.id for s in pipeline.ingest(tmp_path)]
        assert ids[:2] == ["normal/0000.pgm", "normal/a.png"]

    def test_empty_class_names_stage(self, tmp_path):
        write_tree(tmp_path, {"normal": 2, "benign": 2})
        (tmp_path / "malignant").mkdir()
        with pytest.raises(InvalidArgumentError, match="stage 2"):
            pipeline.ingest(tmp_path)

    def test_missing_directory(self, tmp_path):
        write_tree(tmp_path, {"normal": 2, "benign": 2})
        with pytest.raises(InvalidArgumentError):
            pipeline.ingest(tmp_path)

    def test_bad_files_collected(self, tmp_path):
        from PIL import Image
        write_tree(tmp_path, {"normal": 2, "benign": 2, "malignant": 2})
        Image.new("RGB", (3, 3)).save(tmp_path / "benign" / "x.png")
        (tmp_path / "malignant" / "y.pgm").write_bytes(b"P5\n9 9\n255\n\x00")
        with pytest.raises(FormatError, match="2 unreadable"):
            pipeline.ingest(tmp_path)

    def test_label_closed_set(self):
        with pytest.raises(InvalidArgumentError):
            pipeline.Sample(np.zeros((2, 2), np.uint8), "glioma", "x")


class TestSplit:
    def test_half_of_four(self):
        samples = [pipeline.Sample(np.zeros((2, 2), np.uint8), lab, str(i))
                   for i, lab in enumerate(["normal", "normal", "benign", "benign"])]
        train, test = pipeline.split(samples, 0.5, seed=1)
        assert sorted(s.label for s in train) == ["benign", "normal"]
        assert sorted(s.label for s in test) == ["benign", "normal"]

    def test_deterministic(self):
        samples = fixture_samples(5)
        a = pipeline.split(samples, 0.8, seed=3)
        b = pipeline.split(samples, 0.8, seed=3)
        assert [s.id for s in a[0]] == [s.id for s in b[0]]
        assert [s.id for s in a[1]] == [s.id for s in b[1]]

    def test_stratified_counts(self):
        train, test = pipeline.split(fixture_samples(5), 0.8, seed=0)
        for label in pipeline.LABELS:
            assert sum(s.label == label for s in train) == 4
            assert sum(s.label == label for s in test) == 1

    @pytest.mark.parametrize("ratio", [0.0, 1.0, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(InvalidArgumentError):
            pipeline.split(fixture_samples(2), ratio)

    def test_singleton_class(self):
        samples = fixture_samples(2)[:5]
        with pytest.raises(InvalidArgumentError):
            pipeline.split(samples, 0.5)


class TestFit:
    def test_training_accuracy(self, fitted):
        report = pipeline.evaluate(fitted, fixture_samples())
        for cm in (report.presence, report.severity):
            assert evaltune.metrics(cm).accuracy >= 0.95

    def test_model_invariants(self, fitted):
        dim = fitted.net.plan.feature_length(fitted.net.feature_mode)
        for stage in (fitted.presence, fitted.severity):
            assert stage.mask.size == dim
            assert stage.svm.n_features == stage.mask.sum()
        assert len(fitted.curve.loss) == FAST.epochs

    def test_own_labels_predicted(self, fitted):
        samples = fixture_samples()[::7]
        assert [p.label for p in pipeline.predict_many(fitted, [s.image for s in samples])] == \
            [s.label for s in samples]

    def test_missing_malignant(self):
        samples = [s for s in fixture_samples(3) if s.label != "malignant"]
        with pytest.raises(InvalidArgumentError, match="stage 2"):
            pipeline.fit(samples, FAST)

    def test_missing_normal(self):
        samples = [s for s in fixture_samples(3) if s.label != "normal"]
        with pytest.raises(InvalidArgumentError, match="stage 1"):
            pipeline.fit(samples, FAST)

    def test_cost_ratio_pairing(self):
        train, test = pipeline.split(fixture_samples(), 0.5, seed=4)
        base = pipeline.PipelineConfig(epochs=0, seed=1)
        m1 = pipeline.fit(train, dataclasses.replace(base, cost_ratio=1.0))
        m4 = pipeline.fit(train, dataclasses.replace(base, cost_ratio=4.0))
        np.testing.assert_array_equal(m1.presence.mask, m4.presence.mask)
        np.testing.assert_array_equal(m1.severity.mask, m4.severity.mask)
        fn1 = pipeline.evaluate(m1, test).presence.fn
        fn4 = pipeline.evaluate(m4, test).presence.fn
        assert fn4 <= fn1

    def test_all_pools_lasso_shrinks(self):
        samples = fixture_samples(14)[:40]
        cfg = pipeline.PipelineConfig(epochs=0, features="all-pools")
        model = pipeline.fit(samples, cfg)
        assert model.presence.mask.size == 283_168
        assert 0 < model.presence.mask.sum() < model.presence.mask.size


def toy_model(bias1, bias2):
    """Two-feature model whose stage scores are just the given biases."""
    def stage(bias):
        svm = csvm.SvmModel(np.zeros((1, 2)), np.zeros(1), bias, csvm.KernelSpec(1.0), csvm.CostSpec(1.0))
        return pipeline.Stage(np.ones(2, bool), np.zeros(2), np.ones(2), svm)
    return pipeline.PipelineModel(net=None, config=FAST, presence=stage(bias1), severity=stage(bias2))


class TestRouting:
    def test_negative_stage1_short_circuits(self):
        model = toy_model(-1.0, 1.0)
        model.severity = None  # any use of stage 2 would fail
        preds = pipeline._route(model, np.zeros((3, 2)))
        assert all(p.label == "normal" and p.severity_score is None for p in preds)
        assert preds[0].presence_score == -1.0

    @pytest.mark.parametrize("b2,label", [(1.0, "malignant"), (0.0, "malignant"), (-0.5, "benign")])
    def test_stage2_mapping(self, b2, label):
        pred = pipeline._route(toy_model(0.5, b2), np.zeros((1, 2)))[0]
        assert pred.label == label
        assert pred.presence_score == 0.5 and pred.severity_score == b2


class TestEvaluate:
    def test_counts_and_metrics(self, fitted):
        test = fixture_samples(4, seed=9)
        report = pipeline.evaluate(fitted, test)
        assert report.presence.total == len(test)
        assert report.severity.total == sum(s.label != "normal" for s in test)
        d = report.as_dict()
        for key, cm in (("presence", report.presence), ("severity", report.severity)):
            assert d[key]["metrics"] == evaltune.metrics(cm).as_dict()
            assert d[key]["confusion"] == cm.as_dict()

    def test_perfect_on_training_set(self, fitted):
        report = pipeline.evaluate(fitted, fixture_samples())
        assert report.presence.fp == report.presence.fn == 0
        assert report.severity.fp == report.severity.fn == 0

    def test_empty(self, fitted):
        with pytest.raises(InvalidArgumentError):
            pipeline.evaluate(fitted, [])


class TestPersistence:
    def test_round_trip_predictions(self, fitted, tmp_path):
        path = tmp_path / "m.bin"
        pipeline.save(fitted, path)
        clone = pipeline.load(path)
        probe = [img for img, _, _ in synthetic.phantom_set(17, seed=5)][:50]
        a = pipeline.predict_many(fitted, probe)
        b = pipeline.predict_many(clone, probe)
        assert a == b
        assert clone.config == fitted.config
        assert pipeline.to_bytes(clone) == pipeline.to_bytes(fitted)

    def test_same_seed_same_file(self, fitted):
        again = pipeline.fit(fixture_samples(), FAST)
        assert hashlib.sha256(pipeline.to_bytes(again)).digest() == \
            hashlib.sha256(pipeline.to_bytes(fitted)).digest()

    def test_corrupt_file(self, fitted):
        blob = bytearray(pipeline.to_bytes(fitted))
        with pytest.raises(FormatError):
            pipeline.from_bytes(bytes(blob[:-3]))
        blob[0:4] = b"NOPE"
        with pytest.raises(FormatError):
            pipeline.from_bytes(bytes(blob))
