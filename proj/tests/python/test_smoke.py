import math

import pytest

import mmpop

DIMS = (6, 6, 6)


def small_config():
    cfg = mmpop.default_config()
    cfg.update(
        model_dim=16,
        hidden=16,
        k=5,
        lr=3e-3,
        epochs=3,
        patience=3,
        synthesis_epochs=8,
        threads=1,
    )
    return cfg


@pytest.fixture(scope="module")
def world():
    mf = mmpop.generate_synthetic(videos=80, authors=3, seed=5, dims=DIMS, unlabeled=10)
    labeled = [r for r in mf.records if r.targets is not None]
    pool = [r for r in mf.records if r.targets is None]
    train, val = mmpop.split(labeled, 0.8, 5)
    ens = mmpop.train(train, val, mf.dims, small_config(), pool)
    return mf, train, val, ens


def test_synthetic_manifest():
    mf = mmpop.generate_synthetic(videos=30, authors=2, seed=1, dims=DIMS, unplayable=4)
    assert len(mf) == 30
    assert len(mmpop.filter_playable(mf.records)) == 26
    s = mmpop.summarize(mf)
    assert s["total"] == 30
    assert s["playable"] == 26
    assert set(s["missing"]) == {"visual", "acoustic", "textual"}
    r = mf.records[0]
    assert len(r.embeddings["visual"]) == 6
    assert set(r.targets) == {"hearts", "shares", "comments", "plays"}


def test_split_is_deterministic():
    mf = mmpop.generate_synthetic(videos=50, authors=3, seed=2, dims=DIMS)
    a = mmpop.split(mf.records, 0.8, 3)
    b = mmpop.split(mf.records, 0.8, 3)
    assert [r.video_id for r in a[0]] == [r.video_id for r in b[0]]
    assert len(a[0]) + len(a[1]) == 50


def test_metrics():
    assert mmpop.mse([1.0, 2.0], [3.0, 5.0]) == 6.5
    assert math.isclose(mmpop.plcc([1, 2, 3], [1, 3, 2]), 0.5)
    assert mmpop.plcc([1, 2, 3], [4, 4, 4]) is None
    with pytest.raises(mmpop.UsageError):
        mmpop.mse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mmpop.plcc([1.0], [1.0])


def test_train_predict_evaluate(world, tmp_path):
    mf, train, val, ens = world
    preds = ens.predict(val)
    assert [vid for vid, _ in preds] == [r.video_id for r in val]
    for _, t in preds:
        assert all(v >= 0 for v in t.values())

    for metric in ("hearts", "shares", "comments", "plays"):
        sel = ens.selection(metric)
        assert set(sel.values()) <= {"R", "C"}
    with pytest.raises(mmpop.UsageError):
        ens.selection("likes")

    report = ens.evaluate(val)
    assert isinstance(report, dict)

    path = tmp_path / "model.bundle"
    ens.save(path)
    back = mmpop.Ensemble.load(path)
    assert back.predict(val) == preds
    assert back.config == ens.config


def test_errors():
    with pytest.raises(mmpop.UsageError):
        mmpop.train([], [], (4, 4, 4), {"epochz": 1})
    with pytest.raises(mmpop.DataError):
        mmpop.load_manifest("/nonexistent/manifest.jsonl")
    with pytest.raises(mmpop.DataError):
        mmpop.Ensemble.load("/nonexistent/model.bundle")


def test_manifest_round_trip(tmp_path):
    mf = mmpop.generate_synthetic(videos=12, authors=2, seed=3, dims=DIMS)
    p = tmp_path / "m.jsonl"
    mmpop.save_manifest(p, mf)
    back = mmpop.load_manifest(p)
    assert len(back) == 12
    assert back.records[3].video_id == mf.records[3].video_id
    assert back.records[3].targets == mf.records[3].targets


def test_run_cli(tmp_path):
    out = tmp_path / "m.jsonl"
    assert mmpop.run_cli(["-q", "synth", "--out", str(out), "--videos", "20", "--dims", "4,4,4"]) == 0
    assert out.exists()
    assert mmpop.run_cli(["frobnicate"]) == 1
    assert mmpop.run_cli(["-q", "validate", "--manifest", str(tmp_path / "absent.jsonl")]) == 2
