"""Shared fixtures: synthetic corpora with well-separated author styles"""

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from synthetic_corpus import (  # noqa: E402
    generate_adversarial_fixture,
    generate_corpus,
    write_author_dirs,
    write_manifest,
    write_pairing,
)


@pytest.fixture(autouse=True)
def _no_cache_override(monkeypatch):
    monkeypatch.delenv("CODATTR_CACHE_DIR", raising=False)
    monkeypatch.delenv("CODATTR_OPENAI_KEY", raising=False)
    monkeypatch.delenv("CODATTR_GEMINI_KEY", raising=False)


@pytest.fixture(scope="session")
def corpus60():
    return generate_corpus(60, 4)


@pytest.fixture(scope="session")
def corpus10():
    return generate_corpus(10, 4)


@pytest.fixture
def corpus_dir(tmp_path, corpus60) -> Path:
    return write_author_dirs(corpus60, tmp_path / "corpus")


@pytest.fixture
def adversarial_dirs(tmp_path):
    """(originals root, transformed root, pairing path) for 10 evasion + 10 imitation rows"""
    originals, transformed, rows = generate_adversarial_fixture(10, 3)
    root = write_author_dirs(originals, tmp_path / "originals")
    write_manifest(transformed, tmp_path / "transformed")
    pairing = write_pairing(rows, tmp_path / "pairing.json")
    return root, tmp_path / "transformed", pairing
