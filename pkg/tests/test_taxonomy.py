import json

import pytest

from ccihp_eval.maskcore import ClassOutOfRange
from ccihp_eval.taxonomy import SchemaError, characterizable, load_taxonomy, load_taxonomy_file


def test_default_counts(tax):
    assert [len(tax.names(t)) for t in ("attribute", "size", "pattern", "color")] == [19, 4, 4, 12]
    assert tax.num_classes("color") == 13  # background included


def test_multicolor_present(tax):
    assert "Multicolor" in tax.names("color")


def test_characterizable_examples(tax):
    idx = lambda name: tax.class_index("attribute", name)  # noqa: E731
    assert characterizable(tax, idx("Hair"))
    assert characterizable(tax, idx("Glasses"))
    assert not characterizable(tax, idx("Face"))


def test_default_characterizable_set(tax):
    names = {tax.class_name("attribute", a) for a in tax.characterizable_ids()}
    assert names == {"Hat", "Hair", "Glove", "Glasses", "UpperClothes", "Mask", "Coat", "Socks",
                     "Pants", "Scarf/Tie", "Skirt", "L-shoe", "R-shoe"}
    for body in ("Torso-skin", "Face", "L-arm", "R-arm", "L-leg", "R-Leg"):
        assert not characterizable(tax, tax.class_index("attribute", body))


def test_characterizable_is_total(tax):
    for a in range(1, 20):
        assert characterizable(tax, a) in (True, False)
    for bad in (0, 20):
        with pytest.raises(ClassOutOfRange):
            characterizable(tax, bad)


def test_eleven_colors_rejected(tax):
    doc = tax.to_document()
    doc["colors"] = doc["colors"][:11]
    with pytest.raises(SchemaError):
        load_taxonomy(doc)


def test_bad_documents():
    with pytest.raises(SchemaError):
        load_taxonomy("{not json")
    with pytest.raises(SchemaError):
        load_taxonomy({"attributes": []})


def test_document_round_trip(tax, tmp_path):
    path = tmp_path / "tax.json"
    path.write_text(json.dumps(tax.to_document()))
    assert load_taxonomy_file(path) == tax
    assert load_taxonomy(json.dumps(tax.to_document())) == tax


def test_table_order(tax):
    assert tax.names("attribute")[0] == "Hat"
    assert tax.names("attribute")[-1] == "R-shoe"
    assert tax.names("size") == ("Short/small", "Long/large", "Undetermined", "Sparse/bald")
