import pytest

from fixtures_meld import table2_csv


@pytest.fixture
def table2_dialogue():
    from meldrefine.schema import group_dialogues, parse_records

    records, errors = parse_records(table2_csv(), "train")
    assert not errors
    (dialogue,) = group_dialogues(records)
    return dialogue
