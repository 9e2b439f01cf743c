import numpy as np
import pytest

import mmcd


def tiny_config(variant="full"):
    cfg = mmcd.ModelConfig.variant(variant)
    cfg.tile_size = 32
    cfg.base_channels = 8
    cfg.depths = [1, 1, 1, 1]
    cfg.decoder_channels = 16
    cfg.validate()
    return cfg


def tiny_sample(seed=3):
    sc = mmcd.SceneConfig()
    sc.size = 32
    d = mmcd.generate_sample(sc, seed=seed)
    return mmcd.sample_from_arrays(d["optical"], d["sar"], d["label"], id=f"s{seed}")


def test_config_variants_and_json():
    hashes = {mmcd.ModelConfig.variant(v).hash() for v in ["baseline", "v1", "v2", "full"]}
    assert len(hashes) == 4

    cfg = tiny_config()
    again = mmcd.ModelConfig.parse_json(cfg.canonical_json())
    assert again.hash() == cfg.hash()
    assert again.variant_name() == "full"

    with pytest.raises(mmcd.InvalidArgument):
        mmcd.ModelConfig.variant("v3")
    bad = mmcd.ModelConfig.variant("full")
    bad.tile_size = 33
    with pytest.raises(mmcd.InvalidArgument):
        bad.validate()


def test_exception_hierarchy():
    assert issubclass(mmcd.ShapeError, mmcd.InvalidArgument)
    assert issubclass(mmcd.InvalidArgument, mmcd.Error)
    assert issubclass(mmcd.Error, RuntimeError)
    with pytest.raises(mmcd.IoError):
        mmcd.load_sample_dir("/no/such/dir")


def test_scene_generation():
    sc = mmcd.SceneConfig()
    sc.size = 32
    a = mmcd.generate_sample(sc, seed=9)
    b = mmcd.generate_sample(sc, seed=9)
    c = mmcd.generate_sample(sc, seed=10)

    assert a["optical"].shape == (3, 32, 32)
    assert a["sar"].shape == (4, 32, 32)
    assert a["label"].shape == (32, 32)
    assert a["label"].dtype == np.int32
    assert 0.0 <= a["optical"].min() and a["optical"].max() <= 1.0
    assert 0.0 <= a["sar"].min() and a["sar"].max() <= 1.0
    assert set(np.unique(a["label"])) <= set(range(7))

    for key in ("optical", "sar", "label"):
        np.testing.assert_array_equal(a[key], b[key])
    assert not np.array_equal(a["label"], c["label"]) or not np.array_equal(
        a["optical"], c["optical"]
    )


def test_dataset_round_trip(tmp_path):
    sc = mmcd.SceneConfig()
    sc.size = 32
    man = mmcd.build_dataset(str(tmp_path / "d"), 6, sc, splits=(0.7, 0.15, 0.15), seed=4)
    assert man["count"] == 6
    assert sum(man["split_sizes"]) == 6

    train = mmcd.load_split(str(tmp_path / "d"), "train")
    assert len(train) == man["split_sizes"][0]
    s = train[0]
    assert s.optical.shape == (3, 32, 32)
    assert s.label.shape == (32, 32)
    # 8-bit storage round trip keeps values on the 1/255 grid
    assert np.allclose(s.optical * 255, np.round(s.optical * 255), atol=1e-9)


def test_model_forward_and_checkpoint(tmp_path):
    cfg = tiny_config()
    m = mmcd.Model(cfg)
    m.initialize(5)
    assert m.parameter_count() > m.parameter_count(trainable_only=True) > 0
    assert "pgffm" in m.stage_names()

    s = tiny_sample()
    opt, sar = s.optical[None], s.sar[None]
    logits = m.forward(opt, sar)
    assert logits.shape == (1, 7, 32, 32)
    assert np.isfinite(logits).all()
    np.testing.assert_array_equal(logits, m.forward(opt, sar))  # eval mode is pure

    gates = m.forward_gates(opt, sar)
    assert [g.shape for g in gates] == [(8, 8), (4, 4), (2, 2), (1, 1)]
    for g in gates:  # projector starts at zero -> sigmoid(0)
        np.testing.assert_allclose(g, 0.5)

    path = str(tmp_path / "w.bin")
    m.save_checkpoint(path)
    other = mmcd.Model(cfg)
    other.initialize(99)
    other.load_checkpoint(path)
    np.testing.assert_array_equal(logits, other.forward(opt, sar))

    mismatched = mmcd.Model(tiny_config("baseline"))
    mismatched.initialize(0)
    with pytest.raises(mmcd.IncompatibleCheckpoint):
        mismatched.load_checkpoint(path)

    with pytest.raises(mmcd.ShapeError):
        m.forward(s.optical[None, :2], sar)


def test_fit_evaluate_predict(tmp_path):
    cfg = tiny_config("baseline")
    m = mmcd.Model(cfg)
    m.initialize(5)

    samples = [tiny_sample(seed) for seed in (1, 2, 3, 4)]
    tc = mmcd.TrainConfig()
    tc.iterations = 6
    tc.batch_size = 2
    tc.seed = 1
    log = tmp_path / "log.jsonl"
    res = mmcd.fit(m, samples, config=tc, checkpoint_path=str(tmp_path / "w.bin"),
                   log_path=str(log))
    assert res.iterations == 6
    assert np.isfinite(res.final_loss)
    assert (tmp_path / "w.bin").exists()
    assert len(log.read_text().strip().splitlines()) >= 7

    # fresh model, same seeds -> identical trajectory
    m2 = mmcd.Model(cfg)
    m2.initialize(5)
    res2 = mmcd.fit(m2, samples, config=tc)
    assert res2.final_loss == res.final_loss

    rep = mmcd.evaluate(m, samples, batch_size=3)
    assert rep.pixel_total == 4 * 32 * 32
    assert 0.0 <= rep.oa <= 1.0
    assert len(rep.iou_per_class) == 7
    assert '"oa"' in rep.to_json()

    labels = mmcd.predict_labels(m, samples[0])
    logits = mmcd.predict_logits(m, samples[0])
    np.testing.assert_array_equal(labels, np.argmax(logits[0], axis=0))

    weights = mmcd.class_weights(samples, 7, "unit")
    assert weights == [1.0] * 7

    with pytest.raises(mmcd.InvalidArgument):
        bad = mmcd.TrainConfig()
        bad.iterations = 0
        mmcd.fit(m, samples, config=bad)


def test_grad_checks():
    cases = mmcd.run_grad_checks(0)
    assert len(cases) >= 8
    assert all(c["pass"] for c in cases)
    assert any(c["expect_mismatch"] for c in cases)
    assert all(c["params"] <= 2000 for c in cases)
