import pathlib

import pytest

from dialogforge.agent import build_stack
from dialogforge.engine import load_database
from dialogforge.schema import load_schemas

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

SCHEMAS_PATH = FIXTURES / "schemas.json"
DB_PATH = FIXTURES / "db.json"
DB_SMALL_PATH = FIXTURES / "db_small.json"


@pytest.fixture(scope="session")
def schemas():
    return load_schemas(SCHEMAS_PATH)


@pytest.fixture(scope="session")
def db(schemas):
    return load_database(DB_PATH, schemas)


@pytest.fixture(scope="session")
def db_small(schemas):
    return load_database(DB_SMALL_PATH, schemas)


@pytest.fixture(scope="session")
def stack():
    return build_stack(SCHEMAS_PATH, DB_PATH)
