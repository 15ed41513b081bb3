from __future__ import annotations

import dataclasses

import pytest

from idminer.synth import GenerationConfig, PopulationConfig, SplitConfig, build_rddp_dataset


def small_config(n=6, videos=4, frames=40, test=2, **pop) -> GenerationConfig:
    return GenerationConfig(
        population=PopulationConfig(n_identities=n, videos_per_identity=videos, frames=frames, **pop),
        split=SplitConfig(test_identities=test))


@pytest.fixture(scope="session")
def small_corpus():
    """6 identities (4 train, 2 test), 4 videos of 40 frames each."""
    return build_rddp_dataset(small_config(), seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    return small_corpus.dataset()


def replace_population(cfg: GenerationConfig, **kw) -> GenerationConfig:
    return dataclasses.replace(cfg, population=dataclasses.replace(cfg.population, **kw))


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
