import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haap.charset import TRAIN94
from haap.datagen import (
    OCCLUSION_FILL,
    CorpusSpec,
    Degradation,
    Style,
    UnrenderableCharacter,
    generate,
    glyph_boxes,
    leakage,
    manifest_digest,
    read_split,
    render,
    sample_corpus,
    split_indices,
    to_bytes,
)
from haap.font5x7 import available
from haap.lexicon import WORDS


def test_empty_word_is_background_only():
    img = render("", Style(background=(200, 180, 160)))
    assert img.shape == (32, 128, 3)
    assert np.allclose(img, np.array([200, 180, 160]) / 255)


def test_render_is_deterministic_and_pure():
    deg = Degradation(rotation_deg=4.0, blur_sigma=0.7, noise_std=0.1)
    a = render("quartz", Style(dx=2), seed=9, degradation=deg)
    b = render("quartz", Style(dx=2), seed=9, degradation=deg)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, render("quartz", Style(dx=2), seed=10, degradation=deg))


def test_ink_inside_glyph_boxes_only():
    style = Style(ink=(0, 0, 0), background=(255, 255, 255))
    img = render("Hi!", style)
    inked = img[..., 0] < 0.5
    boxes = glyph_boxes("Hi!", style)
    inside = np.zeros_like(inked)
    for x0, y0, x1, y1 in boxes:
        inside[y0:y1, x0:x1] = True
        assert inked[y0:y1, x0:x1].any()
    assert not (inked & ~inside).any()


def test_corner_tail_occlusion_is_filled_box():
    spec = CorpusSpec(count=40, seed=3, lexicon=("corner",), occlusion_prob=1.0, occlusion_frac=0.2)
    sample = sample_corpus(spec)[0]
    x0, y0, x1, y1 = sample.degradation.occlusion
    last = glyph_boxes("corner", sample.style)[-1]
    assert x0 <= last[0] and x1 == last[2] and (y0, y1) == (last[1], last[3])
    img = sample.image()
    assert np.all(img[y0:y1, x0:x1] == OCCLUSION_FILL)
    # the first glyph stays intact
    first = glyph_boxes("corner", sample.style)[0]
    assert not np.all(img[first[1]:first[3], first[0]:first[2]] == OCCLUSION_FILL)


def test_unrenderable():
    with pytest.raises(UnrenderableCharacter):
        render("naïve")
    with pytest.raises(UnrenderableCharacter):
        render("a" * 26)


def test_every_train_symbol_has_a_glyph():
    assert set(available()) == set(TRAIN94.symbols)


def test_lexicon_shape():
    assert len(WORDS) == 200 == len(set(WORDS))
    assert all(2 <= len(w) <= 10 and w.isalpha() and w.islower() for w in WORDS)


def test_count_zero(tmp_path):
    paths = generate(CorpusSpec(count=0), tmp_path)
    assert paths["manifest"].read_text() == "split\tid\tlabel\tdegradation\n"
    for name in ("train", "val", "test"):
        s = read_split(paths[name])
        assert len(s) == 0 and s.images.shape == (0, 32, 128, 3)


def test_same_spec_same_digest(tmp_path):
    spec = CorpusSpec(count=30, seed=4, blur_sigma=1.0, noise_std=0.05, occlusion_prob=0.3)
    a = generate(spec, tmp_path / "a")
    b = generate(spec, tmp_path / "b")
    assert manifest_digest(a["manifest"]) == manifest_digest(b["manifest"])
    for name in ("train", "val", "test"):
        assert a[name].read_bytes() == b[name].read_bytes()
    c = generate(CorpusSpec(count=30, seed=5), tmp_path / "c")
    assert manifest_digest(c["manifest"]) != manifest_digest(a["manifest"])


def test_split_arithmetic():
    parts = split_indices(1000, (0.8, 0.1, 0.1), 0)
    assert [len(parts[k]) for k in ("train", "val", "test")] == [800, 100, 100]
    assert sorted(np.concatenate(list(parts.values())).tolist()) == list(range(1000))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 300), st.integers(0, 10**6))
def test_splits_partition(n, seed):
    parts = split_indices(n, (0.7, 0.2, 0.1), seed)
    allidx = np.concatenate(list(parts.values()))
    assert len(allidx) == n and len(set(allidx.tolist())) == n


def test_container_round_trip_and_no_leakage(tmp_path):
    spec = CorpusSpec(count=60, seed=1, rotation_deg=3.0)
    paths = generate(spec, tmp_path)
    train, test = read_split(paths["train"]), read_split(paths["test"])
    assert leakage(train, test) == []
    samples = {s.id: s for s in sample_corpus(spec)}
    for i, label, rec, img in zip(test.ids, test.labels, test.records, test.images):
        assert samples[i].label == label
        assert rec == json.loads(json.dumps(samples[i].record(), sort_keys=True))
        assert np.array_equal(img, to_bytes(samples[i].image()))


def test_leakage_detects_shared_triple(tmp_path):
    paths = generate(CorpusSpec(count=20, seed=2), tmp_path)
    train = read_split(paths["train"])
    assert leakage(train, train) == train.ids


def test_container_header_bytes(tmp_path):
    paths = generate(CorpusSpec(count=10, seed=0), tmp_path)
    raw = paths["val"].read_bytes()
    assert raw.startswith(b"HAAPDS 1\nsplit val\ncount 1\nimage 128 32 3\n")
    head, payload = raw.split(b"\n---\n", 1)
    assert len(payload) == 1 * 32 * 128 * 3


@pytest.mark.parametrize("kw", [dict(count=-1), dict(blur_sigma=4), dict(occlusion_prob=1.5),
                                dict(rotation_deg=20), dict(noise_std=0.9), dict(splits=(0.5, 0.5, 0.5))])
def test_spec_ranges(kw):
    with pytest.raises(ValueError):
        CorpusSpec(**kw)


def test_bad_lexicon_label_rejected():
    with pytest.raises(ValueError):
        sample_corpus(CorpusSpec(count=3, lexicon=("ok", "résumé")))
