"""
Glyph alphabet and raster stencils for synthetic scenes.

Class 0 is the CTC blank; glyph i of the alphabet is class i + 1.
"""

import logging
import string
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.core.errors import AnnotationError, ConfigError

logger = logging.getLogger(__name__)

BLANK = 0
MIN_HAMMING = 4
STENCIL_SHAPE = (7, 5)

_BASE_STENCILS: Dict[str, Sequence[str]] = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
}

DEFAULT_ALPHABET = "".join(_BASE_STENCILS)

# Extra symbols used when a larger vocabulary is configured
_EXTENDED_SYMBOLS = "".join(
    ch for ch in string.ascii_uppercase + string.digits + string.ascii_lowercase + string.punctuation + "\u00a3\u20ac"
    if ch not in _BASE_STENCILS
)

MAX_VOCAB = len(DEFAULT_ALPHABET) + len(_EXTENDED_SYMBOLS)


def _parse(rows: Sequence[str]) -> np.ndarray:
    return np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)


class GlyphSet:
    """Ordered glyph classes with one binary stencil each"""

    def __init__(self, vocab_size: int = len(DEFAULT_ALPHABET), seed: int = 0):
        if not 1 <= vocab_size <= MAX_VOCAB:
            raise ConfigError(f"vocab_size must lie in [1, {MAX_VOCAB}], got {vocab_size}")
        symbols = (DEFAULT_ALPHABET + _EXTENDED_SYMBOLS)[:vocab_size]
        self.alphabet = symbols
        self.stencils: Dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        for ch in symbols:
            if ch in _BASE_STENCILS:
                stencil = _parse(_BASE_STENCILS[ch])
            else:
                stencil = self._draw_distinct(rng)
            self._check_distinct(ch, stencil)
            self.stencils[ch] = stencil
        self._index = {ch: i + 1 for i, ch in enumerate(symbols)}
        logger.debug(f"GlyphSet with {vocab_size} classes")

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    @property
    def num_classes(self) -> int:
        """Glyph classes plus the blank"""
        return self.vocab_size + 1

    def _check_distinct(self, ch: str, stencil: np.ndarray) -> None:
        for other, existing in self.stencils.items():
            distance = int(np.sum(existing != stencil))
            if distance < MIN_HAMMING:
                raise ConfigError(f"glyphs {other!r} and {ch!r} differ in only {distance} cells")

    def _draw_distinct(self, rng: np.random.Generator, attempts: int = 1000) -> np.ndarray:
        for _ in range(attempts):
            stencil = rng.random(STENCIL_SHAPE) < 0.45
            if all(np.sum(existing != stencil) >= MIN_HAMMING for existing in self.stencils.values()):
                return stencil
        raise ConfigError("could not draw a distinguishable stencil")

    def encode(self, text: str, record: Optional[int] = None) -> List[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as e:
            raise AnnotationError(f"character {e.args[0]!r} is outside the vocabulary", record=record,
                                  field="transcript") from None

    def decode(self, classes: Sequence[int]) -> str:
        return "".join(self.alphabet[c - 1] for c in classes if 1 <= c <= self.vocab_size)

    def validate(self, text: str, record: Optional[int] = None) -> str:
        self.encode(text, record)
        return text

    def stencil(self, ch: str) -> np.ndarray:
        return self.stencils[ch]
