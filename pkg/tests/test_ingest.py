import io
from datetime import date

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ews.ingest import (
    FilterPolicy,
    LocationConflictError,
    ParcelLocation,
    SchemaError,
    TransactionRecord,
    deduplicate,
    filter_transactions,
    geojoin,
    parse_locations,
    parse_transactions,
    prepare,
    write_locations,
    write_transactions,
)

HEADER = "parcel_id,date,price,deed_type,residential\n"


def parse(text, **kw):
    return parse_transactions(io.StringIO(text), **kw)


def test_parse_basic_record():
    records, rejects = parse(HEADER + "SBL1,2012-05-01,150000,DEED,1\n")
    assert rejects == []
    (rec,) = records
    assert rec.price == 150000 and rec.deed_type == "DEED" and rec.date == date(2012, 5, 1)
    assert not rec.located


def test_parse_rejects_with_reasons():
    text = HEADER + "\n".join([
        "A,2088-01-01,100,DEED,1",
        "B,not-a-date,100,DEED,1",
        "C,2012-01-01,abc,DEED,1",
        "D,2012-01-01,100,DEED,maybe",
        "E,2012-01-01",
    ]) + "\n"
    records, rejects = parse(text)
    assert records == []
    assert [r.reason for r in rejects] == [
        "date out of range", "unparseable date", "unparseable price", "unparseable residential flag", "short row",
    ]
    assert [r.row for r in rejects] == [1, 2, 3, 4, 5]


def test_parse_empty_and_schema():
    assert parse("") == ([], [])
    with pytest.raises(SchemaError):
        parse("parcel_id,date,price\nA,2012-01-01,5\n")
    records, _ = parse("SBL;SALE_DATE;PRICE;DEED;RES\nA;2012-01-01;$1,500;deed;yes\n", delimiter=";", schema={
        "parcel_id": "SBL", "date": "SALE_DATE", "price": "PRICE", "deed_type": "DEED", "residential": "RES"})
    assert records[0].price == 1500 and records[0].deed_type == "DEED" and records[0].residential


def rec(pid="A", price=100, deed="DEED", residential=True, when=date(2012, 1, 1)):
    return TransactionRecord(pid, when, price, deed, residential)


def test_filter_clauses():
    policy = FilterPolicy()
    kept, report = filter_transactions([rec(deed="MTGE"), rec(price=4), rec(price=5), rec(residential=False),
                                        rec(when=date(1999, 1, 1))], policy)
    assert [r.price for r in kept] == [5]
    assert report.dropped == {"deed": 1, "price": 1, "residential": 1, "date": 1}
    assert report.n_input == 5 and report.n_kept == 1


def test_filter_first_failing_clause_wins():
    _, report = filter_transactions([rec(deed="MTGE", price=0, residential=False)])
    assert report.dropped["deed"] == 1 and sum(report.dropped.values()) == 1


records_st = st.lists(
    st.builds(
        TransactionRecord,
        parcel_id=st.sampled_from(["A", "B", "C"]),
        date=st.dates(date(1995, 1, 1), date(2022, 12, 31)),
        price=st.integers(0, 20),
        deed_type=st.sampled_from(["DEED", "D1A", "MTGE", "QCD"]),
        residential=st.booleans(),
    ),
    max_size=30,
)


@given(records_st)
def test_filter_idempotent_and_accounted(records):
    kept, report = filter_transactions(records)
    again, report2 = filter_transactions(kept)
    assert again == kept and sum(report2.dropped.values()) == 0
    assert report.n_kept + sum(report.dropped.values()) == len(records)


def test_filter_identity_on_conforming_input():
    good = [rec(pid=p) for p in "ABC"]
    assert filter_transactions(good)[0] == good


def test_deduplicate():
    out, n = deduplicate([rec(), rec(), rec(price=200)])
    assert n == 1 and len(out) == 2


def test_geojoin():
    loc = ParcelLocation("A", 42.9, -78.9)
    joined, unmatched = geojoin([rec("A")], [loc])
    assert unmatched == [] and joined[0].latitude == 42.9 and joined[0].located
    joined, unmatched = geojoin([rec("Z")], [loc])
    assert joined == [] and unmatched == ["Z"]
    with pytest.raises(LocationConflictError):
        geojoin([rec("A")], [loc, ParcelLocation("A", 42.0, -78.9)])
    joined, _ = geojoin([rec("A")], [loc, loc])
    assert len(joined) == 1


def test_prepare_inventory_ignores_price_rule():
    locs = [ParcelLocation(p, 42.9, -78.9 + i * 0.001) for i, p in enumerate("ABC")]
    records = [rec("A", price=0), rec("B", price=100), rec("C", deed="MTGE"), rec("D")]
    data = prepare(records, locs)
    assert [r.parcel_id for r in data.sales] == ["B"]
    assert [h.parcel_id for h in data.homes] == ["A", "B"]
    assert data.unmatched == ["D"]
    assert data.summary()["filter"]["dropped"]["price"] == 1


def test_write_parse_round_trip():
    records = [TransactionRecord("A", date(2012, 3, 4), 99, "DEED", False, 42.123456789, -78.987654321)]
    buf = io.StringIO()
    write_transactions(records, buf)
    buf.seek(0)
    assert parse_transactions(buf)[0] == records
    locs = [ParcelLocation("A", 42.123456789, -78.987654321)]
    buf = io.StringIO()
    write_locations(locs, buf)
    buf.seek(0)
    assert parse_locations(buf) == locs
