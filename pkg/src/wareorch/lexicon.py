"""Fixed Spanish/English token table shipped with the package."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

LEXICON_VERSION = 1
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Lexicon:
    es_to_en: dict[str, str]

    @property
    def en_to_es(self) -> dict[str, str]:
        return {en: es for es, en in self.es_to_en.items()}

    @property
    def en_vocab(self) -> frozenset[str]:
        return frozenset(self.es_to_en.values())

    def normalize(self, token: str) -> str:
        if token in self.en_vocab:
            return token
        return self.es_to_en.get(token, UNKNOWN)

    def translate_to_es(self, token: str) -> str:
        return self.en_to_es.get(token, token)


def parse_lexicon(text: str) -> Lexicon:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["es_token", "en_token"]:
        raise ValueError(f"lexicon header must be es_token,en_token; got {reader.fieldnames}")
    return Lexicon({row["es_token"]: row["en_token"] for row in reader})


def load_lexicon(path=None) -> Lexicon:
    if path is None:
        text = resources.files("wareorch.data").joinpath("lexicon.csv").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_lexicon(text)


DEFAULT_LEXICON = load_lexicon()
