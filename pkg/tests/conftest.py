import pytest

from ccrkit.corpus import default_region_model, generate_corpus
from ccrkit.grammar import default_table


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def region():
    return default_region_model()


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(5, 240)


@pytest.fixture(scope="session")
def splits():
    from ccrkit.corpus import split_dataset
    return split_dataset(generate_corpus(1, 1100), seed=1)


@pytest.fixture(scope="session")
def clean_matcher(splits):
    from ccrkit.matcher import train_matcher
    train, val, _ = splits
    return train_matcher(train, val, seed=1)


@pytest.fixture(scope="session")
def clean_cmdclf(splits):
    from ccrkit.cmdclf import train_classifier
    train, val, _ = splits
    return train_classifier(train, val, seed=1)


@pytest.fixture(scope="session")
def cdm3d(region):
    from ccrkit.cdm import build_cdm
    from ccrkit.corpus import generate_command_pairs
    return build_cdm(generate_command_pairs(7, region, 300))


@pytest.fixture(scope="session")
def components(clean_matcher, clean_cmdclf, cdm3d):
    from ccrkit.fusion import Components
    return Components(clean_matcher, clean_cmdclf, cdm3d)


@pytest.fixture(scope="session")
def clean_fusion(splits, components):
    from ccrkit.fusion import FusionTrainConfig, train_identifier
    train, val, _ = splits
    return train_identifier(train, val, components, FusionTrainConfig(epochs=5), seed=1)


# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
REPORTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not REPORTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    for block in REPORTS:
        tr.write_line("")
        for line in block.rstrip("\n").splitlines():
            tr.write_line(line)
