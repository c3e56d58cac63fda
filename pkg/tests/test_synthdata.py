import re

import numpy as np
import pytest

from ocrk.det_post import HeuristicWordDetector
from ocrk.errors import EmptyDictionary, PlacementFailed, UnrenderableChar
from ocrk.font import GLYPHS, has_glyph
from ocrk.preprocess import read_pgm
from ocrk.synthdata import (
    AUGMENTED_MIX,
    DEFAULT_DICTIONARY,
    SynthConfig,
    compose_page,
    generate_corpus,
    make_word,
    read_detection_manifest,
    read_recognition_manifest,
    render_word,
    ink_bbox,
    text_mask,
    vocabularies,
)
from ocrk.types import Alphabet


def test_font_covers_default_alphabet():
    assert set(GLYPHS) == set(Alphabet.default().symbols)
    assert not has_glyph("~")


def test_default_dictionary_shape():
    assert len(set(DEFAULT_DICTIONARY)) == 50
    assert {len(w) for w in DEFAULT_DICTIONARY} == set(range(1, 11))


def test_augmented_words_have_expected_shapes():
    rng = np.random.default_rng(0)
    cfg = SynthConfig(mix=AUGMENTED_MIX)
    seen = {"url": 0, "email": 0, "phone": 0, "plain": 0}
    for _ in range(400):
        w = make_word(rng, cfg)
        if re.fullmatch(r"[a-z]+\.[a-z]+\.(com|org|net|io)/[a-z]+", w):
            seen["url"] += 1
        elif re.fullmatch(r"[a-z]+@[a-z]+\.(com|org|net|io)", w):
            seen["email"] += 1
        elif re.fullmatch(r"\d{3}[-.]?\d{3}[-.]?\d{4}", w):
            seen["phone"] += 1
        else:
            assert w in DEFAULT_DICTIONARY
            seen["plain"] += 1
    assert all(seen.values())


def test_empty_dictionary():
    with pytest.raises(EmptyDictionary):
        make_word(np.random.default_rng(0), SynthConfig(dictionary=()))


def test_render_word_is_tight():
    img, text = render_word("ocr", np.random.default_rng(1), scale=2)
    assert text == "ocr"
    mask = text_mask("ocr", 2)
    assert img.height >= mask.shape[0] - 2
    assert img.pixels.min() < 0.4 and img.pixels.max() > 0.6


def test_unrenderable_char():
    with pytest.raises(UnrenderableChar):
        text_mask("~")


def test_compose_page_keeps_words_apart():
    rng = np.random.default_rng(2)
    page, truth = compose_page(["alpha", "beta", "gamma"], rng)
    assert [t for _, t in truth] == ["alpha", "beta", "gamma"]
    for i, (a, _) in enumerate(truth):
        assert 0 <= a.x_min < a.x_max <= page.width and 0 <= a.y_min < a.y_max <= page.height
        for b, _ in truth[i + 1 :]:
            assert a.x_max <= b.x_min or b.x_max <= a.x_min or a.y_max <= b.y_min or b.y_max <= a.y_min


def test_compose_page_too_small():
    with pytest.raises(PlacementFailed):
        compose_page(["abcdefghij"], np.random.default_rng(0), size=(20, 20))


def test_disjoint_vocab():
    train, test = vocabularies(SynthConfig(disjoint_vocab=True))
    assert not set(train) & set(test)
    assert set(train) | set(test) == set(DEFAULT_DICTIONARY)


def test_corpus_layout_and_determinism(tmp_path):
    cfg = SynthConfig(train_count=40, test_count=12, seed=3)
    a = generate_corpus(cfg, tmp_path / "a")
    b = generate_corpus(cfg, tmp_path / "b")
    for split in ("train", "test"):
        assert a[split].recognition.read_bytes() == b[split].recognition.read_bytes()
        assert a[split].detection.read_bytes() == b[split].detection.read_bytes()
        pages_a = sorted((tmp_path / "a" / split / "pages").iterdir())
        pages_b = sorted((tmp_path / "b" / split / "pages").iterdir())
        assert [p.read_bytes() for p in pages_a] == [p.read_bytes() for p in pages_b]
    assert a["train"].n_words == 40 and a["test"].n_words == 12

    rec = read_recognition_manifest(a["test"].recognition)
    assert len(rec) == 12
    assert all(p.exists() for p, _ in rec)
    det = read_detection_manifest(a["test"].detection)
    assert sum(len(w) for _, w in det) == 12
    assert [t for _, words in det for _, t in words] == [t for _, t in rec]
    gt_lines = a["test"].detection_gt.read_text().splitlines()
    assert len(gt_lines) == 12


def test_corpus_pages_are_detectable(tmp_path):
    manifests = generate_corpus(SynthConfig(train_count=1, test_count=30, seed=9), tmp_path)
    det = HeuristicWordDetector()
    for page_path, words in read_detection_manifest(manifests["test"].detection):
        assert len(det.detect(read_pgm(page_path))) == len(words)


def test_dictionary_outside_alphabet(tmp_path):
    with pytest.raises(UnrenderableChar):
        generate_corpus(SynthConfig(dictionary=("café",), train_count=1, test_count=1), tmp_path)


def test_dictionary_file(tmp_path):
    (tmp_path / "words.txt").write_text("one\ntwo\n\nthree\n")
    assert SynthConfig.with_dictionary_file(tmp_path / "words.txt").dictionary == ("one", "two", "three")


def clean_cfg():
    return SynthConfig(noise=0.0, jitter=0, ink_range=(0.0, 0.0), background_range=(1.0, 1.0))


def test_noiseless_render_is_exact_glyph():
    from ocrk.font import glyph

    img, _ = render_word("a", np.random.default_rng(0), clean_cfg(), scale=1)
    assert np.array_equal(img.pixels < 0.5, glyph("a"))


def test_width_grows_with_length():
    widths = [render_word("w" * n, np.random.default_rng(0), clean_cfg(), scale=2)[0].width for n in range(1, 8)]
    assert widths == sorted(widths) and len(set(widths)) == len(widths)


def template_read(img, scale):
    """Recover text from a noiseless render by matching each glyph cell against the font."""
    from ocrk.font import GLYPH_H, GLYPH_W, SPACING, glyph

    ink = img.pixels < 0.5
    step = (GLYPH_W + SPACING) * scale
    out = []
    for x in range(0, ink.shape[1], step):
        cell = ink[: GLYPH_H * scale : scale, x : x + GLYPH_W * scale : scale]
        out.append(next(ch for ch in GLYPHS if np.array_equal(glyph(ch), cell)))
    return "".join(out)


def test_template_matching_oracle_reads_renders():
    rng = np.random.default_rng(1)
    cfg = clean_cfg()
    for text in ["hello", "a.b@c-d", "0123456789", "QUERY?"]:
        img, _ = render_word(text, rng, cfg, scale=3)
        assert template_read(img, 3) == text


def test_ground_truth_box_holds_all_ink():
    rng = np.random.default_rng(4)
    cfg = SynthConfig(noise=0.0)
    page, truth = compose_page(["ocr"], rng, cfg)
    ink = page.pixels < 0.5
    (box, _), = truth
    inside = ink[int(box.y_min) : int(box.y_max), int(box.x_min) : int(box.x_max)]
    assert inside.sum() == ink.sum() > 0
    assert ink_bbox(ink) == box


def test_empty_page():
    page, truth = compose_page([], np.random.default_rng(0))
    assert truth == [] and page.width >= 480


def test_make_word_is_deterministic():
    cfg = SynthConfig(mix=AUGMENTED_MIX)
    a = [make_word(np.random.default_rng(5), cfg) for _ in range(3)]
    b = [make_word(np.random.default_rng(5), cfg) for _ in range(3)]
    assert a == b


def test_default_corpus_counts(corpus):
    _, manifests = corpus
    assert manifests["train"].n_words == 2000 and manifests["test"].n_words == 200
    alpha = Alphabet.default()
    for split in ("train", "test"):
        texts = [t for _, t in read_recognition_manifest(manifests[split].recognition)]
        assert all(alpha.can_encode(t) and 1 <= len(t) <= 10 for t in texts)
