import math
import warnings

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from saspa.dataset import (
    carve_validation_split,
    load_dataset,
    make_contextual_bias_split,
    make_few_shot_subset,
)
from saspa.errors import DescriptorError

from conftest import make_descriptor


def _write(tmp_path, doc):
    p = tmp_path / "d.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


MINIMAL = {
    "name": "tiny",
    "meta_class": "Airplane",
    "sub_classes": ["A"],
    "images": [{"id": "x1", "path": "x1.png", "sub_class": 0}],
    "splits": {"train": ["x1"]},
}


def test_load_minimal(tmp_path):
    d = load_dataset(_write(tmp_path, MINIMAL))
    assert d.name == "tiny"
    assert d.split("train") == ("x1",)
    assert d.resolve_path(d.images[0]) == tmp_path.resolve() / "x1.png"


def test_load_aircraft_split_sizes(tmp_path):
    sizes = {"train": 3334, "val": 3333, "test": 3333}
    images, splits, n = [], {}, 0
    for split, count in sizes.items():
        ids = [f"{split}{i}" for i in range(count)]
        images += [{"id": i, "path": f"{i}.jpg", "sub_class": n % 100} for n, i in enumerate(ids)]
        splits[split] = ids
    doc = {"name": "aircraft", "meta_class": "Airplane",
           "sub_classes": [f"variant {i}" for i in range(100)], "images": images, "splits": splits}
    d = load_dataset(_write(tmp_path, doc))
    assert d.split_sizes() == sizes


def test_dangling_split_id(tmp_path):
    doc = dict(MINIMAL, splits={"train": ["x1", "x9"]})
    with pytest.raises(DescriptorError, match="dangling image id 'x9'"):
        load_dataset(_write(tmp_path, doc))


def test_missing_file(tmp_path):
    with pytest.raises(DescriptorError, match="not found"):
        load_dataset(tmp_path / "nope.yaml")


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"sub_classes": []}, "sub_classes"),
        ({"sub_classes": ["A", "A"]}, "sub_classes"),
        ({"images": [{"id": "x1", "path": "x1.png", "sub_class": 3}]}, "sub_class"),
        ({"images": [{"id": "x1", "sub_class": 0}]}, "path"),
        ({"images": [{"id": "x1", "path": "p", "sub_class": 0, "background_tag": "sky"}]}, "background_tag"),
        ({"splits": {"train": ["x1"], "test": ["x1"]}}, "splits"),
    ],
)
def test_schema_violation_names_field(tmp_path, patch, field):
    with pytest.raises(DescriptorError, match=field):
        load_dataset(_write(tmp_path, {**MINIMAL, **patch}))


def test_background_tags_declared(tmp_path):
    doc = dict(MINIMAL, background_tags=["sky", "road"],
               images=[{"id": "x1", "path": "p", "sub_class": 0, "background_tag": "sky"}])
    assert load_dataset(_write(tmp_path, doc)).images[0].background_tag == "sky"


# -- validation carve ------------------------------------------------------------


def test_carve_single_class():
    d = carve_validation_split(make_descriptor([100]), 0.33, seed=7)
    assert len(d.split("train")) == 67
    assert len(d.split("val")) == 33
    assert not set(d.split("train")) & set(d.split("val"))


def test_carve_floor_edge():
    d = carve_validation_split(make_descriptor([2, 10]), 0.33, seed=7)
    classes = {img.id: img.sub_class for img in d.images}
    assert [classes[i] for i in d.split("val")].count(0) == 0
    assert [classes[i] for i in d.split("val")].count(1) == 3


def test_carve_deterministic():
    base = make_descriptor([40, 17, 9])
    assert carve_validation_split(base, 0.33, 3).splits == carve_validation_split(base, 0.33, 3).splits
    assert carve_validation_split(base, 0.33, 3).splits != carve_validation_split(base, 0.33, 4).splits


def test_carve_errors():
    d = carve_validation_split(make_descriptor([10]), 0.5, 0)
    with pytest.raises(DescriptorError, match="already has a val"):
        carve_validation_split(d, 0.5, 0)
    empty_class = make_descriptor([3, 0])
    with pytest.raises(DescriptorError, match="zero train images"):
        carve_validation_split(empty_class, 0.33, 0)


@settings(max_examples=60, deadline=None)
@given(sizes=st.lists(st.integers(1, 40), min_size=1, max_size=6),
       fraction=st.floats(0.01, 0.99), seed=st.integers(0, 2**31))
def test_carve_stratified_floor(sizes, fraction, seed):
    d = carve_validation_split(make_descriptor(sizes), fraction, seed)
    classes = {img.id: img.sub_class for img in d.images}
    for c, n in enumerate(sizes):
        # enumeration oracle: count how many k in 1..n satisfy k <= fraction*n
        expected = sum(1 for k in range(1, n + 1) if k <= fraction * n + 1e-9)
        assert sum(classes[i] == c for i in d.split("val")) == expected == math.floor(fraction * n + 1e-9)
    assert sorted(d.split("train") + d.split("val")) == sorted(classes)


# -- few shot --------------------------------------------------------------------


def test_few_shot_four():
    d = make_few_shot_subset(make_descriptor([12] * 10), shots=4, seed=0)
    assert len(d.split("train")) == 40
    for members in d.train_by_class().values():
        assert len(members) == 4


def test_few_shot_full_class():
    base = make_descriptor([5, 5])
    d = make_few_shot_subset(base, shots=5, seed=9)
    assert set(d.split("train")) == set(base.split("train"))


def test_few_shot_insufficient_names_class():
    with pytest.raises(DescriptorError, match="'class 1'"):
        make_few_shot_subset(make_descriptor([8, 3]), shots=5, seed=0)


def test_few_shot_deterministic():
    base = make_descriptor([20, 20, 20])
    assert make_few_shot_subset(base, 8, 11).splits == make_few_shot_subset(base, 8, 11).splits


# -- contextual bias ---------------------------------------------------------------


def _tagged_pool():
    from saspa.dataset import DatasetDescriptor, ImageRecord

    counts = {("Airbus", "sky"): 98, ("Airbus", "grass"): 30, ("Airbus", "road"): 70,
              ("Boeing", "sky"): 129, ("Boeing", "grass"): 112, ("Boeing", "road"): 25}
    images = []
    for (cls, tag), n in counts.items():
        for i in range(n):
            images.append(ImageRecord(f"{cls}-{tag}-{i}", "p.png", ["Airbus", "Boeing"].index(cls), tag))
    return DatasetDescriptor("planes", "Airplane", ("Airbus", "Boeing"), tuple(images),
                             {"train": tuple(im.id for im in images), "val": (), "test": ()},
                             background_tags=("sky", "grass", "road")).validate()


def _counts(d):
    out = {}
    for img in d.train:
        key = (d.sub_classes[img.sub_class], img.background_tag)
        out[key] = out.get(key, 0) + 1
    return out


def test_bias_split_reproduces_table_counts():
    d = make_contextual_bias_split(_tagged_pool(), {"Airbus": {"sky", "road"}, "Boeing": {"sky", "grass"}})
    c = _counts(d)
    assert (c.get(("Airbus", "sky")), c.get(("Airbus", "grass"), 0), c.get(("Airbus", "road"))) == (98, 0, 70)
    assert (c.get(("Boeing", "sky")), c.get(("Boeing", "grass")), c.get(("Boeing", "road"), 0)) == (129, 112, 0)
    assert len(d.split("train")) == 409


def test_bias_split_identity():
    pool = _tagged_pool()
    all_tags = {"sky", "grass", "road"}
    d = make_contextual_bias_split(pool, {"Airbus": all_tags, "Boeing": all_tags})
    assert d.split("train") == pool.split("train")


def test_bias_split_empty_allowed_warns():
    pool = _tagged_pool()
    with pytest.warns(UserWarning, match="zero train images"):
        d = make_contextual_bias_split(pool, {"Airbus": set()})
    assert 0 not in d.train_by_class()
    assert len(d.split("train")) == 129 + 112 + 25


def test_bias_split_errors():
    pool = _tagged_pool()
    with pytest.raises(DescriptorError, match="unknown class"):
        make_contextual_bias_split(pool, {"Embraer": {"sky"}})
    with pytest.raises(DescriptorError, match="no background_tag"):
        make_contextual_bias_split(make_descriptor([3]), {"class 0": {"sky"}})


def test_bias_split_only_removes():
    pool = _tagged_pool()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = make_contextual_bias_split(pool, {"Airbus": {"road"}, "Boeing": {"grass"}})
    assert set(d.split("train")) <= set(pool.split("train"))
    assert d.images == pool.images
    assert len(set(d.split("train"))) == len(d.split("train"))
