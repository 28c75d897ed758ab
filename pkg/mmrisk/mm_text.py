#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging
import os.path
import re

from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np
from nltk.stem.porter import PorterStemmer as NltkPorterStemmer
from nltk.stem.snowball import SnowballStemmer

from mmrisk.mm_exceptions import ConfigurationError

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = '<pad>'
UNK_TOKEN = '<unk>'

# digits, underscore and every non-word character (punctuation, hyphens, apostrophes) become a space
_NON_LETTER_RUN = re.compile(r"[\W\d_]+", flags=re.UNICODE)

DEFAULT_STOPWORDS_FILE = os.path.join(os.path.dirname(__file__), 'resources', 'dutch_stopwords.txt')


@dataclass(frozen=True)
class RawReport:
    patient_id: str
    text: str = ''

    def __post_init__(self):
        if not self.patient_id:
            raise ConfigurationError("Report without patient_id is not allowed!")


class Stemmer(ABC):
    name = 'abstract'

    @abstractmethod
    def stem(self, token: str) -> str:
        pass

    def __repr__(self):
        return f"{self.__class__.__name__}()"


class IdentityStemmer(Stemmer):
    name = 'identity'

    def stem(self, token: str) -> str:
        return token


class PorterStemmer(Stemmer):
    """
    English Porter stemmer, in the variant that reproduces the published
    voc.txt / output.txt test vocabulary
    """
    name = 'english'

    def __init__(self):
        self._stemmer = NltkPorterStemmer(mode=NltkPorterStemmer.MARTIN_EXTENSIONS)

    def stem(self, token: str) -> str:
        return self._stemmer.stem(token)


class DutchSnowballStemmer(Stemmer):
    name = 'dutch'

    def __init__(self):
        self._stemmer = SnowballStemmer('dutch')

    def stem(self, token: str) -> str:
        return self._stemmer.stem(token)


STEMMERS = {
    IdentityStemmer.name: IdentityStemmer,
    PorterStemmer.name: PorterStemmer,
    DutchSnowballStemmer.name: DutchSnowballStemmer,
}


def make_stemmer(name: str) -> Stemmer:
    if name not in STEMMERS:
        raise ConfigurationError(f"Unknown stemmer `{name}`, choose one of: {sorted(STEMMERS)}")
    return STEMMERS[name]()


def load_stopwords(path: Optional[str] = None) -> FrozenSet[str]:
    """
    Stopword file: one token per line, UTF-8. Empty lines and lines starting with `#` are skipped.
    :param path: stopword file, the packaged Dutch list when None
    """
    stopwords_file = DEFAULT_STOPWORDS_FILE if path is None else path
    if not os.path.isfile(stopwords_file):
        raise ConfigurationError(f"Stopword file not found: {stopwords_file}")
    with open(stopwords_file, 'r', encoding='utf-8') as fd:
        words = (line.strip().lower() for line in fd)
        return frozenset(w for w in words if w and not w.startswith('#'))


def preprocess(text: str, stopwords: Iterable[str], stemmer: Stemmer) -> List[str]:
    """
    (1) lowercase; (2) remove digits and punctuation; (3) drop stopwords; (4) stem; (5) drop stems
    that are stopwords themselves (Dutch `heten` stems to `het`). Token order is preserved.
    """
    if not text:
        return []
    lowered = text.lower()
    tokens = _NON_LETTER_RUN.sub(' ', lowered).split()
    stopword_set = stopwords if isinstance(stopwords, (set, frozenset)) else frozenset(stopwords)
    stems = (stemmer.stem(token) for token in tokens if token not in stopword_set)
    return [stem for stem in stems if stem and stem not in stopword_set]


@dataclass(frozen=True)
class Vocabulary:
    token_to_index: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        indices = sorted(self.token_to_index.values())
        if indices != list(range(2, 2 + len(indices))):
            raise ConfigurationError("Vocabulary indices must be contiguous starting at 2!")

    @property
    def size(self) -> int:
        return len(self.token_to_index) + 2

    def __len__(self):
        return self.size

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def inverse(self) -> Dict[int, str]:
        inverse = {PAD_INDEX: PAD_TOKEN, UNK_INDEX: UNK_TOKEN}
        inverse.update({idx: tok for tok, idx in self.token_to_index.items()})
        return inverse

    def to_dict(self) -> Dict[str, int]:
        return dict(self.token_to_index)

    @staticmethod
    def from_dict(mapping: Dict[str, int]) -> 'Vocabulary':
        return Vocabulary(token_to_index=dict(mapping))


def build_vocabulary(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """
    Tokens with frequency >= min_count get indices 2.. by descending frequency, ties lexicographically
    """
    if min_count < 1:
        raise ConfigurationError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(((tok, cnt) for tok, cnt in counts.items() if cnt >= min_count), key=lambda x: (-x[1], x[0]))
    logging.info(f"vocabulary: {len(kept)} of {len(counts)} distinct tokens kept (min_count={min_count})")
    return Vocabulary(token_to_index={tok: idx + 2 for idx, (tok, _) in enumerate(kept)})


@dataclass(frozen=True)
class EncodedReport:
    ids: np.ndarray
    length: int

    def __repr__(self):
        return f"EncodedReport(length={self.length}, ids={self.ids[:self.length].tolist()})"


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> EncodedReport:
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    kept = list(tokens)[:max_len]
    ids = np.full(max_len, PAD_INDEX, dtype=np.int64)
    ids[:len(kept)] = [vocab.index(tok) for tok in kept]
    return EncodedReport(ids=ids, length=len(kept))


def decode(report: EncodedReport, vocab: Vocabulary) -> List[str]:
    inverse = vocab.inverse()
    return [inverse[int(idx)] for idx in report.ids[:report.length]]


def encode_many(token_lists: Sequence[Sequence[str]], vocab: Vocabulary, max_len: int):
    """
    Stack encoded reports into an (n, max_len) id matrix and a length vector
    """
    encoded = [encode(tokens, vocab, max_len) for tokens in token_lists]
    ids = np.stack([e.ids for e in encoded]) if encoded else np.zeros((0, max_len), dtype=np.int64)
    lengths = np.array([e.length for e in encoded], dtype=np.int64)
    return ids, lengths
