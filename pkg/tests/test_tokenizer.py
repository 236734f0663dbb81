import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from e2edrive import tokenizer as tok


def test_special_ids_are_pinned():
    assert (tok.PAD, tok.BOS, tok.EOS, tok.SEP, tok.TRAJ) == (256, 257, 258, 259, 260)
    assert tok.VOCAB_SIZE == 261


@pytest.mark.parametrize("text,ids", [("A", [65]), ("", []), ("é", [0xC3, 0xA9])])
def test_encode_bytes(text, ids):
    assert tok.encode(text) == ids


def test_encode_nav_command():
    ids = tok.encode("turn left now")
    assert len(ids) == 13 and ids[0] == 116


def test_decode_drops_specials():
    assert tok.decode([65, tok.EOS]) == "A"
    assert tok.decode([tok.BOS, 104, tok.SEP, 105, tok.PAD, tok.TRAJ]) == "hi"


def test_invalid_utf8_becomes_replacement_char():
    assert tok.decode([255]) == "�"


def test_is_special():
    assert not tok.is_special(255)
    assert all(tok.is_special(i) for i in range(256, 261))


@settings(max_examples=500, deadline=None)
@given(st.text())
def test_roundtrip_property(text):
    assert tok.decode(tok.encode(text)) == text


def test_wrapper_class_delegates():
    t = tok.ByteTokenizer()
    assert t.vocab_size == 261
    assert t.decode(t.encode("ok")) == "ok"
