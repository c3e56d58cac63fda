import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ocrk.errors import IndexOutOfRange, InvalidLattice, UnknownSymbol
from ocrk.types import Alphabet, BoundingBox, GrayImage, LabelSequence, ProbLattice, ScoredBox

DEFAULT = Alphabet.default()


def test_default_alphabet_layout():
    assert len(DEFAULT) == 70
    assert DEFAULT.blank_index == 70 == DEFAULT.null_index
    assert DEFAULT.num_classes == 71
    assert len(set(DEFAULT.symbols)) == len(DEFAULT.symbols)


def test_encode_decode_examples():
    abc = Alphabet.case_sensitive_from("abc")
    assert abc.encode("cab").indices == (2, 0, 1)
    assert abc.decode([0, 1, 2]) == "abc"
    assert abc.encode("").indices == ()
    with pytest.raises(UnknownSymbol) as exc:
        abc.encode("abd")
    assert exc.value.char == "d"
    with pytest.raises(IndexOutOfRange):
        abc.decode([3])


def test_case_folding():
    folded = Alphabet.default(case_sensitive=False)
    assert "A" not in folded.symbols
    assert folded.encode("HeLLo") == folded.encode("hello")
    assert DEFAULT.encode("A") != DEFAULT.encode("a")


@given(st.text(alphabet="".join(DEFAULT.symbols), max_size=30))
def test_round_trip(text):
    assert DEFAULT.decode(DEFAULT.encode(text)) == text


def test_alphabet_file_round_trip(tmp_path):
    for alpha in (DEFAULT, Alphabet.default(case_sensitive=False)):
        path = tmp_path / "alpha.txt"
        alpha.save(path)
        back = Alphabet.load(path)
        assert back == alpha
        assert back.digest() == alpha.digest()
    assert DEFAULT.digest() != Alphabet.default(case_sensitive=False).digest()


def test_duplicate_symbols_rejected():
    with pytest.raises(ValueError):
        Alphabet(("a", "a"))


def test_label_repeat_count():
    abc = Alphabet.case_sensitive_from("abc")
    assert abc.encode("aab").repeat_count() == 1
    assert abc.encode("aab").min_ctc_length() == 4
    assert LabelSequence(()).min_ctc_length() == 0


def test_bounding_box():
    b = BoundingBox(1, 2, 5, 10)
    assert (b.width, b.height, b.area) == (4, 8, 32)
    assert b.scaled(2, 0.5).as_tuple() == (2, 1, 10, 5)
    with pytest.raises(ValueError):
        BoundingBox(5, 0, 1, 1)
    with pytest.raises(ValueError):
        ScoredBox(b, 1.5)


def test_gray_image_is_read_only():
    img = GrayImage.from_rows(3, 2, [0, 0.5, 1, 1, 0.5, 0])
    assert (img.width, img.height) == (3, 2)
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1.0
    assert img == GrayImage(np.array([[0, 0.5, 1], [1, 0.5, 0]]))
    assert img.to_bytes() == bytes([0, 128, 255, 255, 128, 0])


def test_lattice_validation():
    ProbLattice(np.array([[0.2, 0.8], [0.5, 0.5]]))
    ProbLattice(np.zeros((0, 3)))
    with pytest.raises(InvalidLattice):
        ProbLattice(np.array([[0.2, 0.7]]))
    with pytest.raises(InvalidLattice):
        ProbLattice(np.array([[1.2, -0.2]]))
    with pytest.raises(InvalidLattice):
        ProbLattice(np.array([0.5, 0.5]))
