"""
Tokenizer shared by the lexical index and the toy bi-encoder.

Lowercase, split on every non-alphanumeric codepoint, drop empty tokens.
No stemming, no stopwords.
"""

import re
import unicodedata
from typing import List

_TOKEN = re.compile(r"[^\W_]+")


def fold_ascii(text: str) -> str:
    """Strip diacritics (NFKD, then drop non-ASCII codepoints)."""
    return unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii")


def tokenize(text: str, ascii_fold: bool = False) -> List[str]:
    if not text:
        return []
    if ascii_fold:
        text = fold_ascii(text)
    return _TOKEN.findall(text.lower())
