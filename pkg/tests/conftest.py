from __future__ import annotations

import sys
from pathlib import Path

import pytest

from dmrs_workbench.corpus import all_instances, ingest_esconv, write_corpus
from dmrs_workbench.llm import MockProvider, StageModelConfig
from dmrs_workbench.llm.client import Gateway
from dmrs_workbench.taxonomy import load_item_registry

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
PACKAGE_DATA = Path(__file__).parents[1] / "src" / "dmrs_workbench" / "data"
SAMPLE_REGISTRY = PACKAGE_DATA / "registry_sample.json"

sys.path.insert(0, str(FIXTURES))


def mock_gateway(provider: MockProvider, **overrides) -> Gateway:
    """Gateway over a mock; sleeping is stubbed out so retry paths run instantly."""
    return Gateway(StageModelConfig().with_overrides(**overrides), provider, sleep=lambda s: None)


@pytest.fixture(scope="session")
def registry():
    return load_item_registry(SAMPLE_REGISTRY, strict=False)


@pytest.fixture(scope="session")
def esconv_dialogues():
    return ingest_esconv(FIXTURES / "esconv_small.json")


@pytest.fixture(scope="session")
def instances(esconv_dialogues):
    return all_instances(esconv_dialogues)


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory, esconv_dialogues):
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    write_corpus(esconv_dialogues, path)
    return path


@pytest.fixture(scope="session")
def surrogate():
    from surrogate import surrogate_gold

    return surrogate_gold()


@pytest.fixture(scope="session")
def surrogate_file(tmp_path_factory, surrogate):
    path = tmp_path_factory.mktemp("gold") / "gold.jsonl"
    write_corpus(surrogate, path)
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
