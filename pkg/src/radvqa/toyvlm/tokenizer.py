"""Tiny word-level tokenizer with byte fallback.

Id layout: specials 0-4, raw bytes 5-260, then a fixed word list. Any text
round-trips exactly: known pieces become word ids, everything else (unknown
words, punctuation, whitespace, non-ASCII) falls back to UTF-8 byte ids.
"""

from __future__ import annotations

import re

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SEP_ID = 3
ANS_ID = 4

BYTE_BASE = 5
WORD_BASE = BYTE_BASE + 256

_PIECE = re.compile(r"[A-Za-z]+|[0-9]+|[^A-Za-z0-9\s]|\s")

WORD_LIST = (
    # question scaffolding
        "what", "which", "is", "are", "the", "a", "an", "of", "in", "on",
        "this", "that", "shown", "imaged", "present", "imaging", "modality",
        "organ", "system", "image", "study", "scan", "finding", "most",
        "apparent", "abnormality", "options", "answer", "question", "yes",
        "no", "and", "or", "with", "showing", "shows", "seen", "there",
        # modalities
        "xray", "ct", "mri", "ultrasound", "radiograph", "axial", "coronal",
        "sagittal",
        # organ systems and common anatomy
        "chest", "gastrointestinal", "musculoskeletal", "brain", "neuro",
        "abdomen", "abdominal", "skeletal", "lung", "lungs", "bowel", "bone",
        "head", "cortical", "pleural", "renal", "hepatic", "cardiac", "wrist",
        "knee", "hip", "spine", "skull",
        # findings
        "pneumonia", "effusion", "nodule", "obstruction", "ulcer", "mass",
        "fracture", "arthritis", "dislocation", "hemorrhage", "lesion",
        "atrophy", "tumor", "cyst", "edema", "stenosis", "tear", "normal",
        "artifact", "appearance", "incidental", "note", "degenerative",
        "acute", "chronic", "small", "large", "right", "left", "upper",
        "lower", "lobe", "wall", "thickening", "simple",
)


class Tokenizer:
    def __init__(self, vocab_size: int = 512):
        needed = WORD_BASE + len(WORD_LIST)
        if vocab_size < needed:
            raise ValueError(f"vocab_size {vocab_size} < {needed} required for byte fallback + word list")
        self.vocab_size = vocab_size
        self._word_to_id = {w: WORD_BASE + i for i, w in enumerate(WORD_LIST)}
        self._id_to_word = {i: w for w, i in self._word_to_id.items()}

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in _PIECE.findall(text):
            wid = self._word_to_id.get(piece)
            if wid is not None:
                ids.append(wid)
            else:
                ids.extend(BYTE_BASE + b for b in piece.encode("utf-8"))
        return ids

    def decode(self, ids: list[int]) -> str:
        out: list[str] = []
        pending: list[int] = []

        def flush():
            if pending:
                out.append(bytes(pending).decode("utf-8", errors="replace"))
                pending.clear()

        for i in ids:
            if BYTE_BASE <= i < WORD_BASE:
                pending.append(i - BYTE_BASE)
            elif i in self._id_to_word:
                flush()
                out.append(self._id_to_word[i])
            else:
                flush()  # specials and out-of-range ids render as nothing
        flush()
        return "".join(out)
