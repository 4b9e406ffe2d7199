import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histoxai import datakit
from histoxai.augment import default_pipeline, save_png
from histoxai.datakit import LabeledExample, build_split, load_batch, scan_dataset, class_count_table
from histoxai.errors import DataError, ParameterError


def fake_inventory(per_class, classes=datakit.CLASS_NAMES):
    return {c: [f"/data/{c}/{c}_{i:05d}.png" for i in range(per_class)] for c in classes}


def ids(examples):
    return {ex.image for ex in examples}


def test_lung_task_five_thousand_per_class_counts():
    split = build_split(fake_inventory(5000), "lung", seed=0)
    t = class_count_table(split)
    assert t["test"] == {"acc/cc": 500, "scc": 500, "ben": 1000}
    assert t["train"] == {"acc/cc": 2000, "scc": 2000, "ben": 4000}


def test_colon_task_five_thousand_per_class_counts():
    t = class_count_table(build_split(fake_inventory(5000), "colon", seed=0))
    assert t["train"] == {"acc/cc": 4000, "scc": None, "ben": 4000}
    assert t["test"] == {"acc/cc": 1000, "scc": None, "ben": 1000}
    assert t["validation"] == {"acc/cc": 800, "scc": None, "ben": 800}


def test_lung_subtype_balanced():
    counts = build_split(fake_inventory(5000), "lung_subtype", seed=0).counts()
    assert counts["test"] == {"lung_aca": 1000, "lung_scc": 1000}


def test_ten_per_class_floor_rules():
    # test floor(10/5)=2, validation floor(8/5)=1, train the remaining 7
    counts = build_split(fake_inventory(10), "colon", seed=0).counts()
    assert counts["test"] == {"colon_aca": 2, "colon_n": 2}
    assert counts["validation"] == {"colon_aca": 1, "colon_n": 1}
    assert counts["train"] == {"colon_aca": 7, "colon_n": 7}


def test_hundred_per_class():
    counts = build_split(fake_inventory(100), "colon", seed=0).counts()
    assert counts == {
        "train": {"colon_aca": 64, "colon_n": 64},
        "validation": {"colon_aca": 16, "colon_n": 16},
        "test": {"colon_aca": 20, "colon_n": 20},
    }


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(10, 60), st.sampled_from(sorted(datakit.TASKS)))
def test_partitions_are_disjoint(seed, per_class, task):
    split = build_split(fake_inventory(per_class), task, seed)
    a, b, c = ids(split.train), ids(split.validation), ids(split.test)
    assert not (a & b or a & c or b & c)
    assert len(a) == len(split.train)


def test_labels_follow_task_mapping():
    split = build_split(fake_inventory(20), "lung", seed=1)
    for ex in split.train + split.validation + split.test:
        assert ex.label == datakit.TASKS["lung"][ex.class_name]


def test_split_ignores_inventory_order():
    inv = fake_inventory(30)
    shuffled = {c: list(reversed(v)) for c, v in inv.items()}
    a, b = build_split(inv, "colon", 3), build_split(shuffled, "colon", 3)
    for part in datakit.PARTITIONS:
        assert [e.image for e in a.partition(part)] == [e.image for e in b.partition(part)]


def test_different_seeds_differ():
    inv = fake_inventory(50)
    assert ids(build_split(inv, "colon", 0).test) != ids(build_split(inv, "colon", 1).test)


def test_too_few_images_is_a_data_error():
    with pytest.raises(DataError):
        build_split(fake_inventory(4), "colon", 0)


def test_missing_class_is_a_data_error():
    with pytest.raises(DataError, match="lung_scc"):
        build_split(fake_inventory(20, ("lung_aca", "lung_n")), "lung", 0)


def test_scan_colon_only_layout(tmp_path):
    img = np.zeros((4, 4, 3), np.uint8)
    for cls in ("colon_aca", "colon_n"):
        (tmp_path / "colon_image_sets" / cls).mkdir(parents=True)
        for i in range(3):
            save_png(img, tmp_path / "colon_image_sets" / cls / f"{i}.png")
    (tmp_path / "misc").mkdir()
    inv = scan_dataset(tmp_path)
    assert sorted(inv) == ["colon_aca", "colon_n"]
    missing = datakit.missing_classes(inv)
    assert missing["colon"] == []
    assert missing["lung"] == ["lung_aca", "lung_scc", "lung_n"]


def test_scan_empty_or_missing_root(tmp_path):
    with pytest.raises(DataError):
        scan_dataset(tmp_path)
    with pytest.raises(DataError):
        scan_dataset(tmp_path / "nope")


def test_synth_counts_and_determinism(tmp_path):
    a = datakit.synth_generate(tmp_path / "a", per_class=10, size=32, seed=4)
    b = datakit.synth_generate(tmp_path / "b", per_class=10, size=32, seed=4)
    files = sorted(p for p in (tmp_path / "a").rglob("*.png"))
    assert len(files) == 20 and sorted(a) == ["colon_aca", "colon_n"]
    for pa, pb in zip(sorted(a["colon_n"]), sorted(b["colon_n"])):
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_synth_rejects_tiny_settings(tmp_path):
    with pytest.raises(ParameterError):
        datakit.synth_generate(tmp_path, per_class=5)
    with pytest.raises(ParameterError):
        datakit.synth_generate(tmp_path, per_class=10, size=16)


def test_load_batch_white_image(tmp_path):
    path = tmp_path / "w.png"
    save_png(np.full((64, 64, 3), 255, np.uint8), path)
    x, y = load_batch([LabeledExample(str(path), "colon_n", 0)], 64)
    assert x.shape == (1, 3, 64, 64)
    np.testing.assert_array_equal(x.data, 1.0)
    assert y.tolist() == [0]


def test_load_batch_shape_and_augmenter_determinism():
    rng = np.random.default_rng(0)
    exs = [LabeledExample(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8), "colon_aca", 1) for _ in range(3)]
    aug = default_pipeline(seed=7)
    a, _ = load_batch(exs, 64, augmenter=aug)
    b, _ = load_batch(exs, 64, augmenter=aug)
    assert a.shape == (3, 3, 64, 64)
    assert a.data.tobytes() == b.data.tobytes()


def test_load_batch_undecodable_names_path(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(DataError, match="bad.png"):
        load_batch([LabeledExample(str(bad), "colon_n", 0)], 64)


def test_manifest_round_trip(tmp_path):
    root = tmp_path / "data"
    datakit.synth_generate(root, per_class=10, size=32, seed=0)
    split = build_split(scan_dataset(root), "colon", seed=2)
    datakit.write_manifest(split, root, tmp_path / "split.json")
    data = json.loads((tmp_path / "split.json").read_text())
    assert set(data) == {"task", "seed", "root", "train", "validation", "test"}
    assert all(not p.startswith("/") for p in data["train"])
    back = datakit.read_manifest(tmp_path / "split.json")
    for part in datakit.PARTITIONS:
        assert [(e.image, e.label) for e in back.partition(part)] == [
            (e.image, e.label) for e in split.partition(part)
        ]


def test_split_summary_layout():
    text = datakit.split_summary(build_split(fake_inventory(5000), "lung", 0))
    assert "Lung cancer" in text
    assert " 2000   2000   4000    500    500   1000" in text
