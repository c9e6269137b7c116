"""Parsing, filtering and geolocation of parcel transaction records."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import IO, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

STUDY_START = date(2000, 1, 1)
STUDY_END = date(2019, 12, 31)

DEFAULT_SCHEMA = {
    "parcel_id": "parcel_id",
    "date": "date",
    "price": "price",
    "deed_type": "deed_type",
    "residential": "residential",
    "latitude": "latitude",
    "longitude": "longitude",
}
REQUIRED_FIELDS = ("parcel_id", "date", "price", "deed_type", "residential")
LOCATION_FIELDS = ("parcel_id", "latitude", "longitude")

# first failing clause wins when attributing drops
CLAUSE_ORDER = ("deed", "price", "residential", "date")

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


class SchemaError(ValueError):
    """A required column is missing from a delimited input."""


class LocationConflictError(ValueError):
    """The same parcel appears twice in a location table with different coordinates."""


@dataclass(frozen=True)
class TransactionRecord:
    parcel_id: str
    date: date
    price: int
    deed_type: str
    residential: bool = True
    latitude: float | None = None
    longitude: float | None = None

    @property
    def located(self) -> bool:
        return (
            self.latitude is not None
            and self.longitude is not None
            and math.isfinite(self.latitude)
            and math.isfinite(self.longitude)
        )


@dataclass(frozen=True)
class ParcelLocation:
    parcel_id: str
    latitude: float
    longitude: float


@dataclass(frozen=True)
class Reject:
    row: int
    reason: str


@dataclass(frozen=True)
class FilterPolicy:
    deed_whitelist: frozenset = frozenset({"D1A", "DEED", "D1B", "D1BU"})
    min_price: int = 5
    residential_only: bool = True
    date_range: tuple = (STUDY_START, STUDY_END)

    def __post_init__(self):
        if self.min_price < 0:
            raise ValueError("min_price must be non-negative")
        start, end = self.date_range
        if start > end:
            raise ValueError("date_range start must not exceed end")
        object.__setattr__(self, "deed_whitelist", frozenset(self.deed_whitelist))

    def failing_clause(self, record: TransactionRecord) -> str | None:
        if record.deed_type not in self.deed_whitelist:
            return "deed"
        if record.price < self.min_price:
            return "price"
        if self.residential_only and not record.residential:
            return "residential"
        start, end = self.date_range
        if not start <= record.date <= end:
            return "date"
        return None

    def without_price_rule(self) -> "FilterPolicy":
        """Policy used for the home inventory: a $0 deed still evidences a home."""
        return replace(self, min_price=0)


@dataclass
class FilterReport:
    n_input: int = 0
    n_kept: int = 0
    dropped: dict = field(default_factory=lambda: {c: 0 for c in CLAUSE_ORDER})

    def as_dict(self) -> dict:
        return {"n_input": self.n_input, "n_kept": self.n_kept, "dropped": dict(self.dropped)}


def _resolve_columns(header: Sequence[str], schema: Mapping[str, str], required: Iterable[str]):
    columns = {}
    for name in required:
        col = schema.get(name, name)
        if col not in header:
            raise SchemaError(f"missing required column {col!r} (field {name!r})")
        columns[name] = header.index(col)
    return columns


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"unparseable residential flag {text!r}")


def _parse_price(text: str) -> int:
    cleaned = text.strip().replace("$", "").replace(",", "")
    value = float(cleaned)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"invalid price {text!r}")
    return int(round(value))


def _parse_coord(text: str | None) -> float | None:
    if text is None or not text.strip():
        return None
    value = float(text)
    return value if math.isfinite(value) else None


def parse_transactions(
    source: IO[str],
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
    date_range: tuple = (STUDY_START, STUDY_END),
) -> tuple[list[TransactionRecord], list[Reject]]:
    """Parse a delimited transaction table.

    Parameters
    ----------
    source : text stream
        Delimited text with a header row.
    schema : mapping, optional
        Maps record field names to column names in the header.
    delimiter : str
        Field separator.
    date_range : (date, date)
        Inclusive range of plausible transaction dates. Dates outside it are
        clerical errors and become row-level rejects.

    Returns
    -------
    records : list of TransactionRecord
    rejects : list of Reject
        Row numbers are 1-based data rows (the header is row 0).
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    reader = csv.reader(source, delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        return [], []
    header = [h.strip() for h in header]
    cols = _resolve_columns(header, schema, REQUIRED_FIELDS)
    lat_col = schema["latitude"] if schema["latitude"] in header else None
    lon_col = schema["longitude"] if schema["longitude"] in header else None
    lat_idx = header.index(lat_col) if lat_col else None
    lon_idx = header.index(lon_col) if lon_col else None

    records, rejects = [], []
    start, end = date_range
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            rejects.append(Reject(rownum, "short row"))
            continue
        parcel = row[cols["parcel_id"]].strip()
        if not parcel:
            rejects.append(Reject(rownum, "missing parcel_id"))
            continue
        try:
            when = date.fromisoformat(row[cols["date"]].strip())
        except ValueError:
            rejects.append(Reject(rownum, "unparseable date"))
            continue
        if not start <= when <= end:
            rejects.append(Reject(rownum, "date out of range"))
            continue
        try:
            price = _parse_price(row[cols["price"]])
        except ValueError:
            rejects.append(Reject(rownum, "unparseable price"))
            continue
        try:
            residential = _parse_bool(row[cols["residential"]])
        except ValueError:
            rejects.append(Reject(rownum, "unparseable residential flag"))
            continue
        try:
            lat = _parse_coord(row[lat_idx]) if lat_idx is not None else None
            lon = _parse_coord(row[lon_idx]) if lon_idx is not None else None
        except ValueError:
            rejects.append(Reject(rownum, "unparseable coordinates"))
            continue
        records.append(
            TransactionRecord(
                parcel_id=parcel,
                date=when,
                price=price,
                deed_type=row[cols["deed_type"]].strip().upper(),
                residential=residential,
                latitude=lat,
                longitude=lon,
            )
        )
    return records, rejects


def parse_locations(
    source: IO[str], schema: Mapping[str, str] | None = None, delimiter: str = ","
) -> list[ParcelLocation]:
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    reader = csv.reader(source, delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        return []
    header = [h.strip() for h in header]
    cols = _resolve_columns(header, schema, LOCATION_FIELDS)
    out = []
    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue
        lat = _parse_coord(row[cols["latitude"]])
        lon = _parse_coord(row[cols["longitude"]])
        if lat is None or lon is None:
            continue
        out.append(ParcelLocation(row[cols["parcel_id"]].strip(), lat, lon))
    return out


def filter_transactions(
    records: Sequence[TransactionRecord], policy: FilterPolicy | None = None
) -> tuple[list[TransactionRecord], FilterReport]:
    """Keep records passing every clause of ``policy``.

    Each dropped record is charged to the first clause it fails, in the
    order deed, price, residential, date.
    """
    policy = policy or FilterPolicy()
    report = FilterReport(n_input=len(records))
    kept = []
    for rec in records:
        clause = policy.failing_clause(rec)
        if clause is None:
            kept.append(rec)
        else:
            report.dropped[clause] += 1
    report.n_kept = len(kept)
    return kept, report


def deduplicate(records: Sequence[TransactionRecord]) -> tuple[list[TransactionRecord], int]:
    """Drop exact repeats of (parcel, date, price, deed), keeping first occurrence."""
    seen = set()
    out = []
    for rec in records:
        key = (rec.parcel_id, rec.date, rec.price, rec.deed_type)
        if key in seen:
            continue
        seen.add(key)
        out.append(rec)
    n_dup = len(records) - len(out)
    if n_dup:
        logger.info("dropped %d duplicate transaction records", n_dup)
    return out, n_dup


def location_index(locations: Iterable[ParcelLocation]) -> dict[str, ParcelLocation]:
    index: dict[str, ParcelLocation] = {}
    for loc in locations:
        prev = index.get(loc.parcel_id)
        if prev is not None and (prev.latitude, prev.longitude) != (loc.latitude, loc.longitude):
            raise LocationConflictError(f"conflicting coordinates for parcel {loc.parcel_id!r}")
        index.setdefault(loc.parcel_id, loc)
    return index


def geojoin(
    records: Sequence[TransactionRecord], locations: Iterable[ParcelLocation]
) -> tuple[list[TransactionRecord], list[str]]:
    """Attach coordinates from ``locations`` by parcel id.

    Returns the located records and the sorted parcel ids that had no
    location row; their records are excluded.
    """
    index = location_index(locations)
    joined, unmatched = [], set()
    for rec in records:
        loc = index.get(rec.parcel_id)
        if loc is None:
            unmatched.add(rec.parcel_id)
            continue
        joined.append(replace(rec, latitude=loc.latitude, longitude=loc.longitude))
    return joined, sorted(unmatched)


def home_inventory(records: Iterable[TransactionRecord]) -> list[ParcelLocation]:
    """Distinct located parcels among ``records``, sorted by parcel id."""
    homes = {}
    for rec in records:
        if rec.located and rec.parcel_id not in homes:
            homes[rec.parcel_id] = ParcelLocation(rec.parcel_id, rec.latitude, rec.longitude)
    return [homes[k] for k in sorted(homes)]


def write_transactions(records: Iterable[TransactionRecord], out: IO[str], delimiter: str = ","):
    writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["parcel_id", "date", "price", "deed_type", "residential", "latitude", "longitude"])
    for r in records:
        writer.writerow([
            r.parcel_id,
            r.date.isoformat(),
            r.price,
            r.deed_type,
            int(r.residential),
            "" if r.latitude is None else repr(r.latitude),
            "" if r.longitude is None else repr(r.longitude),
        ])


def write_locations(locations: Iterable[ParcelLocation], out: IO[str], delimiter: str = ","):
    writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["parcel_id", "latitude", "longitude"])
    for loc in locations:
        writer.writerow([loc.parcel_id, repr(loc.latitude), repr(loc.longitude)])


def write_rejects(rejects: Iterable[Reject], out: IO[str], delimiter: str = ","):
    writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["row", "reason"])
    for rej in rejects:
        writer.writerow([rej.row, rej.reason])


@dataclass
class PreparedData:
    """Clean sales plus the home inventory that fixes each cell's denominator."""

    sales: list
    homes: list
    unmatched: list
    filter_report: FilterReport
    n_duplicates: int

    def summary(self) -> dict:
        return {
            "n_sales": len(self.sales),
            "n_homes": len(self.homes),
            "n_unmatched_parcels": len(self.unmatched),
            "n_duplicates": self.n_duplicates,
            "filter": self.filter_report.as_dict(),
        }


def prepare(
    records: Sequence[TransactionRecord],
    locations: Iterable[ParcelLocation],
    policy: FilterPolicy | None = None,
) -> PreparedData:
    """Deduplicate, geolocate and filter records.

    The home inventory is every located parcel passing the deed, residential
    and date clauses, whatever its price.
    """
    policy = policy or FilterPolicy()
    unique, n_dup = deduplicate(records)
    located, unmatched = geojoin(unique, locations)
    sales, report = filter_transactions(located, policy)
    inventory, _ = filter_transactions(located, policy.without_price_rule())
    return PreparedData(sales, home_inventory(inventory), unmatched, report, n_dup)
