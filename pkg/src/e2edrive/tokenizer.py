"""Byte-level tokenizer with five reserved special tokens."""

from __future__ import annotations

from typing import Iterable

PAD = 256
BOS = 257
EOS = 258
SEP = 259
TRAJ = 260
VOCAB_SIZE = 261

SPECIAL_TOKENS = {"<pad>": PAD, "<bos>": BOS, "<eos>": EOS, "<sep>": SEP, "<traj>": TRAJ}


def encode(text: str) -> list[int]:
    """UTF-8 bytes of ``text``, one id per byte. No specials are added."""
    return list(text.encode("utf-8"))


def decode(ids: Iterable[int]) -> str:
    """Drop specials, join the bytes and decode with replacement on bad UTF-8."""
    return bytes(int(i) for i in ids if 0 <= int(i) < 256).decode("utf-8", errors="replace")


def is_special(token_id: int) -> bool:
    return PAD <= token_id <= TRAJ


class ByteTokenizer:
    """Object wrapper around the module functions, for code that wants one."""

    vocab_size = VOCAB_SIZE
    pad_id, bos_id, eos_id, sep_id, traj_id = PAD, BOS, EOS, SEP, TRAJ

    def encode(self, text: str) -> list[int]:
        return encode(text)

    def decode(self, ids: Iterable[int]) -> str:
        return decode(ids)

    def is_special(self, token_id: int) -> bool:
        return is_special(token_id)
