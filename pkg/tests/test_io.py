import json

import numpy as np
import pytest

from ssrcnn import __version__
from ssrcnn.io import (Dataset, PredictionImage, SchemaError, Vocab, dataset_to_json, load_predictions, load_scene_file,
                       load_seen_set, parse_dataset, parse_predictions, predictions_to_json, save_scene_file,
                       seen_from_scenes)
from ssrcnn.synth import PerturbModel, SceneConfig, generate_dataset, synthetic_predictions


def minimal():
    return {
        "vocab": {"objects": ["person", "horse"], "predicates": ["riding", "near"]},
        "images": [{
            "id": "img0", "width": 200, "height": 100,
            "objects": [{"id": 1, "label": "person", "bbox": [20, 10, 60, 50]},
                        {"id": 2, "label": 1, "bbox": [40, 30, 180, 95]}],
            "relations": [{"sub_id": 1, "obj_id": 2, "predicate": "riding"}],
        }],
    }


def test_minimal_file_parses_to_normalised_boxes():
    ds = parse_dataset(minimal())
    s = ds.scenes[0]
    np.testing.assert_allclose(s.boxes[0], [0.2, 0.3, 0.2, 0.4])
    assert list(s.labels) == [0, 1]
    assert s.relations.tolist() == [[0, 1, 0]]
    assert s.image_id == "img0" and (s.width, s.height) == (200, 100)


@pytest.mark.parametrize("mutate, path", [
    (lambda r: r["images"][0]["objects"][1].update(bbox=[50, 30, 40, 95]), "images[0].objects[1].bbox"),
    (lambda r: r["images"][0]["objects"][0].update(label="cat"), "images[0].objects[0].label"),
    (lambda r: r["images"][0]["objects"][1].update(id=1), "images[0].objects[1].id"),
    (lambda r: r["images"][0]["relations"][0].update(obj_id=7), "images[0].relations[0].obj_id"),
    (lambda r: r["images"][0]["relations"][0].update(obj_id=1), "images[0].relations[0]"),
    (lambda r: r["images"][0].pop("width"), "images[0].width"),
    (lambda r: r["images"][0]["objects"][0].update(bbox=[0, 0, "x", 1]), "images[0].objects[0].bbox[2]"),
    (lambda r: r.pop("vocab"), "$.vocab"),
])
def test_schema_errors_carry_field_paths(mutate, path):
    raw = minimal()
    mutate(raw)
    with pytest.raises(SchemaError) as e:
        parse_dataset(raw)
    assert e.value.path == path


def test_boxes_clip_to_image():
    raw = minimal()
    raw["images"][0]["objects"][1]["bbox"] = [40, 30, 250, 120]
    s = parse_dataset(raw).scenes[0]
    np.testing.assert_allclose(s.boxes[1], [0.6, 0.65, 0.8, 0.7])
    raw["images"][0]["objects"][1]["bbox"] = [210, 30, 250, 120]
    with pytest.raises(SchemaError):
        parse_dataset(raw)


def test_malformed_json_reports_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"vocab": {\n  "objects": [,]}}')
    with pytest.raises(SchemaError) as e:
        load_scene_file(p)
    assert "line 2 column" in str(e.value)


def test_dataset_round_trip_with_header(tmp_path):
    scenes = generate_dataset(SceneConfig(seed=1, num_object_classes=6, num_predicates=4), 5)
    for s in scenes:
        s.width, s.height = 640.0, 480.0
    ds = Dataset(scenes, Vocab.default(6, 4))
    path = tmp_path / "d.json"
    save_scene_file(path, ds, {"seed": 1})
    raw = json.loads(path.read_text())
    assert raw["ssrcnn_version"] == __version__ and raw["config"] == {"seed": 1}
    back = load_scene_file(path)
    assert back.header["config"] == {"seed": 1}
    for a, b in zip(scenes, back.scenes):
        np.testing.assert_allclose(a.boxes, b.boxes, atol=1e-12)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.relations, b.relations)
    # pixel corners pass through normalised cxcywh, so only the last few ulps may move
    again = dataset_to_json(back)["images"]
    for a, b in zip(again, raw["images"]):
        assert a["relations"] == b["relations"]
        for oa, ob in zip(a["objects"], b["objects"]):
            assert oa["label"] == ob["label"]
            np.testing.assert_allclose(oa["bbox"], ob["bbox"], rtol=1e-12)


def test_predictions_round_trip_sorted_with_logits(tmp_path):
    scene = generate_dataset(SceneConfig(seed=2, num_object_classes=6, num_predicates=4), 1)[0]
    trips, logits = synthetic_predictions(scene, PerturbModel(seed=0), 6, 4)
    vocab = Vocab.default(6, 4)
    img = PredictionImage(0, 1.0, 1.0, trips[::-1], logits[::-1])
    path = tmp_path / "p.json"
    path.write_text(json.dumps(predictions_to_json([img], vocab)))
    back, v = load_predictions(path)
    assert v == vocab
    got = back[0]
    assert [t.score for t in got.triplets] == [t.score for t in trips]
    for a, b in zip(got.predicate_logits, logits):
        np.testing.assert_array_equal(a, b)


def test_predictions_score_defaults_to_product():
    raw = {"images": [{"width": 10, "height": 10, "triplets": [
        {"sub": {"bbox": [0, 0, 5, 5], "label": "person", "score": 0.5},
         "obj": {"bbox": [5, 5, 10, 10], "label": "horse", "score": 0.8},
         "predicate": "near", "predicate_score": 0.25}]}]}
    imgs, _ = parse_predictions(raw, parse_dataset(minimal()).vocab)
    assert imgs[0].triplets[0].score == pytest.approx(0.1)
    raw["images"][0]["triplets"][0]["predicate_logits"] = [1.0]
    with pytest.raises(SchemaError) as e:
        parse_predictions(raw, parse_dataset(minimal()).vocab)
    assert e.value.path.endswith("predicate_logits")


def test_seen_sets(tmp_path):
    ds = parse_dataset(minimal())
    assert seen_from_scenes(ds.scenes) == {(0, 0, 1)}
    p = tmp_path / "seen.json"
    p.write_text(json.dumps({"seen": [["person", "near", 1]]}))
    assert load_seen_set(p, ds.vocab) == {(0, 1, 1)}
    p.write_text(json.dumps({"seen": [["person", "near"]]}))
    with pytest.raises(SchemaError):
        load_seen_set(p, ds.vocab)
