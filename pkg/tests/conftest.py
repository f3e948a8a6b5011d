import pytest

from rgma.sqlcore import parse_create_table


@pytest.fixture
def service_schema():
    return parse_create_table(
        "CREATE TABLE Service (uri STRING, type STRING, ts TIMESTAMP)", ["uri"]
    )


@pytest.fixture
def status_schema():
    return parse_create_table(
        "CREATE TABLE ServiceStatus (uri STRING, up INT, message STRING, ts TIMESTAMP)",
        ["uri"],
    )


@pytest.fixture
def demo_schemas(service_schema, status_schema):
    return {"service": service_schema, "servicestatus": status_schema}


@pytest.fixture
def load_schema():
    # numeric-heavy table used by routing/eval tests
    return parse_create_table(
        "CREATE TABLE NodeLoad (site STRING, node STRING, cpu INT, load REAL, ts TIMESTAMP)",
        ["site", "node"],
    )
