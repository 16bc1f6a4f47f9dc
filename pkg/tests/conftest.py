from __future__ import annotations

import pytest

from lase.fixtures import macro_malware, macro_malware_path


@pytest.fixture(scope="session")
def fixture_trace():
    return macro_malware()


@pytest.fixture(scope="session")
def fixture_path():
    return macro_malware_path()
