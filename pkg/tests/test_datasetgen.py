import json

import numpy as np
import pytest

from avs.datasetgen import DatasetConfig, DatasetManifest, generate_triplets, split_dataset

FAST = DatasetConfig(total_iters=200, n_splats=80, n_init_splats=120, image_side=32,
                     snapshots=(1.0,))


def test_single_scene_counts(tmp_path):
    m = generate_triplets(1, tmp_path, FAST, seed=0)
    assert m.count == 8 and len({r["view_id"] for r in m.records}) == 8
    back = DatasetManifest.load(tmp_path)
    assert back.records == m.records and back.config_hash == FAST.digest()
    recs = back.load_records()
    assert all(r.refs.shape == (5, 32, 32, 3) and r.target.shape == (32, 32) for r in recs)
    for meta, r in zip(back.records, recs):
        assert 0.0 <= r.target.min() and r.target.max() <= 1.0
        assert 0.0 <= meta["target_mean"] <= 1.0
        assert meta["view_id"] not in meta["ref_ids"]
        assert abs(meta["target_mean"] - float(r.target.mean())) < 1e-6


def test_regeneration_byte_identical(tmp_path):
    generate_triplets(1, tmp_path / "a", FAST, seed=3)
    generate_triplets(1, tmp_path / "b", FAST, seed=3)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_config_validation():
    with pytest.raises(ValueError):
        DatasetConfig(snapshots=(0.0, 1.0))
    with pytest.raises(ValueError):
        DatasetConfig(snapshots=(1.2,))
    with pytest.raises(ValueError):
        generate_triplets(0, "/nonexistent")
    assert DatasetConfig().snapshot_iters() == [100, 300, 800, 2000]


def test_manifest_schema_checks(tmp_path):
    m = generate_triplets(1, tmp_path, FAST, seed=1)
    d = json.loads((tmp_path / "manifest.json").read_text())
    d["count"] += 1
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(ValueError):
        DatasetManifest.load(tmp_path / "bad.json")
    d = m.to_dict()
    d["schema"] = 99
    (tmp_path / "bad2.json").write_text(json.dumps(d))
    with pytest.raises(ValueError):
        DatasetManifest.load(tmp_path / "bad2.json")


def _fake_manifest(n_scenes):
    recs = [{"scene_id": s, "iteration": 1} for s in range(n_scenes) for _ in range(3)]
    return DatasetManifest(recs, "x", None)


def test_split_examples():
    tr, va = split_dataset(_fake_manifest(10), 0.2, seed=0)
    assert len(tr.scene_ids) == 8 and len(va.scene_ids) == 2
    assert not set(tr.scene_ids) & set(va.scene_ids)
    assert tr.count + va.count == 30
    tr2, va2 = split_dataset(_fake_manifest(10), 0.2, seed=0)
    assert va2.scene_ids == va.scene_ids
    assert any(split_dataset(_fake_manifest(10), 0.2, seed=s)[1].scene_ids != va.scene_ids
               for s in range(1, 6))
    with pytest.raises(ValueError):
        split_dataset(_fake_manifest(1), 0.2)
    with pytest.raises(ValueError):
        split_dataset(_fake_manifest(10), 1.0)


def test_snapshot_progress_over_five_scenes(tmp_path):
    cfg = DatasetConfig(snapshots=(0.1, 1.0))
    m = generate_triplets(5, tmp_path, cfg, seed=11)
    early = [r["target_mean"] for r in m.records if r["iteration"] == 200]
    late = [r["target_mean"] for r in m.records if r["iteration"] == 2000]
    assert len(early) == len(late) == 40
    assert np.mean(early) < np.mean(late)


def test_default_corpus_shape(default_dataset):
    m = default_dataset
    assert m.count == 768 and len(m.scene_ids) == 24
    its = sorted({r["iteration"] for r in m.records})
    assert its == [100, 300, 800, 2000]
    means = {it: np.mean([r["target_mean"] for r in m.records if r["iteration"] == it]) for it in its}
    # distortion-level spread: early snapshots are clearly worse than late ones
    assert means[100] < means[300] < means[800] < means[2000]
