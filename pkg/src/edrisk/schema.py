"""Visit record data model and delimited-file parsing.

A cohort file is UTF-8 CSV with an explicit header, one ED/hospital visit
per row.  CCS diagnosis codes occupy 7 fixed columns; unused slots are
empty.  Categorical level labels live in a sidecar spec file (one line per
field, ``name:level1,level2,...``) rather than being hard-coded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

# CCS category numbering is non-contiguous: the 285 clinical categories
# occupy 1..285, and the mental-health / substance-abuse categories occupy
# 650..670 (e.g. 662 = suicide and intentional self-inflicted injury).
CCS_BASE_RANGE = range(1, 286)
CCS_MH_RANGE = range(650, 671)
VALID_CCS = frozenset(CCS_BASE_RANGE) | frozenset(CCS_MH_RANGE)
# code -> dense column slot in the diagnosis block
CCS_SLOT = {c: i for i, c in enumerate(list(CCS_BASE_RANGE) + list(CCS_MH_RANGE))}
N_CCS = len(CCS_SLOT)
MAX_CODES_PER_VISIT = 7
AGE_MIN = 10
AGE_MAX = 19

NUMERIC_FIELDS = ["year", "age", "zip_code", "patient_county", "facility_id", "service_year"]

# field name -> declared level count
CATEGORICAL_FIELDS = {
    "sex": 4,
    "race": 7,
    "insurance": 6,
    "disposition": 5,
    "urban": 3,
    "disposition_ed": 22,
    "facility_county_ed": 55,
    "payer_ed": 20,
}

CCS_FIELDS = [f"ccs_{i}" for i in range(1, MAX_CODES_PER_VISIT + 1)]

COLUMNS = (
    ["patient_id", "visit_seq"]
    + NUMERIC_FIELDS
    + list(CATEGORICAL_FIELDS)
    + CCS_FIELDS
    + ["outcome"]
)


class SchemaError(Exception):
    """Base class for cohort-file problems."""


class MissingField(SchemaError):
    pass


class UnknownCategoryLevel(SchemaError):
    def __init__(self, field_name, value, row):
        super().__init__(f"row {row}: field {field_name!r} has unknown level {value!r}")
        self.field_name = field_name
        self.value = value
        self.row = row


class CcsOutOfRange(SchemaError):
    pass


class DuplicatePatientSeq(SchemaError):
    pass


class InvariantViolation(SchemaError):
    pass


class SpecFormatError(SchemaError):
    pass


@dataclass
class CategoricalSpec:
    """Ordered level lists for each categorical field.

    Level order fixes the one-hot column layout, so two runs with the same
    spec file produce identical matrices.
    """

    levels: dict[str, list[str]]

    def __post_init__(self):
        if set(self.levels) != set(CATEGORICAL_FIELDS):
            missing = set(CATEGORICAL_FIELDS) - set(self.levels)
            extra = set(self.levels) - set(CATEGORICAL_FIELDS)
            raise SpecFormatError(f"bad field set: missing={sorted(missing)} extra={sorted(extra)}")
        for name, want in CATEGORICAL_FIELDS.items():
            lv = self.levels[name]
            if len(set(lv)) != len(lv):
                raise SpecFormatError(f"field {name!r} has duplicate levels")
            if len(lv) != want:
                raise SpecFormatError(f"field {name!r} declares {len(lv)} levels, expected {want}")
        # field -> {level: index within the field's one-hot block}
        self._index = {name: {lv: i for i, lv in enumerate(lvs)} for name, lvs in self.levels.items()}

    def level_index(self, field_name: str, value: str) -> int:
        try:
            return self._index[field_name][value]
        except KeyError:
            raise UnknownCategoryLevel(field_name, value, row=-1) from None

    def width(self, field_name: str) -> int:
        return len(self.levels[field_name])

    @property
    def one_hot_width(self) -> int:
        return sum(len(v) for v in self.levels.values())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for name in CATEGORICAL_FIELDS:
                f.write(f"{name}:{','.join(self.levels[name])}\n")

    @classmethod
    def load(cls, path) -> "CategoricalSpec":
        levels = {}
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if ":" not in line:
                    raise SpecFormatError(f"line {ln}: expected 'field:level1,level2,...'")
                name, rest = line.split(":", 1)
                levels[name] = rest.split(",")
        return cls(levels)


def default_spec() -> CategoricalSpec:
    """Synthetic level labels at the declared cardinalities (the real labels
    are not public)."""
    return CategoricalSpec(
        {name: [f"{name}_{i}" for i in range(n)] for name, n in CATEGORICAL_FIELDS.items()}
    )


@dataclass
class VisitRecord:
    patient_id: str
    visit_seq: int
    year: int
    age: int
    zip_code: int
    patient_county: int
    facility_id: int
    service_year: int
    sex: str
    race: str
    insurance: str
    disposition: str
    urban: str
    disposition_ed: str
    facility_county_ed: str
    payer_ed: str
    ccs_codes: list[int] = field(default_factory=list)
    outcome: int = 0

    def validate(self, spec: CategoricalSpec, row: int = -1):
        if not (1 <= len(self.ccs_codes) <= MAX_CODES_PER_VISIT):
            raise InvariantViolation(f"row {row}: need 1..{MAX_CODES_PER_VISIT} ccs codes, got {len(self.ccs_codes)}")
        for c in self.ccs_codes:
            if c not in VALID_CCS:
                raise CcsOutOfRange(f"row {row}: ccs code {c} not in 1..285 or 650..670")
        if not (AGE_MIN <= self.age <= AGE_MAX):
            raise InvariantViolation(f"row {row}: age {self.age} outside cohort range [{AGE_MIN}, {AGE_MAX}]")
        if self.visit_seq < 0:
            raise InvariantViolation(f"row {row}: negative visit_seq")
        if self.outcome not in (0, 1):
            raise InvariantViolation(f"row {row}: outcome must be 0 or 1")
        for name in CATEGORICAL_FIELDS:
            value = getattr(self, name)
            if value not in spec._index[name]:
                raise UnknownCategoryLevel(name, value, row)


@dataclass
class CohortSummary:
    patients: int
    visits: int
    positives: int
    prevalence: float | None  # None when the cohort is empty


def _record_from_row(row: list[str], row_num: int) -> VisitRecord:
    if len(row) != len(COLUMNS):
        raise MissingField(f"row {row_num}: expected {len(COLUMNS)} fields, got {len(row)}")
    d = dict(zip(COLUMNS, row))
    for name in ["visit_seq"] + NUMERIC_FIELDS + ["outcome"]:
        try:
            d[name] = int(d[name])
        except ValueError:
            raise MissingField(f"row {row_num}: field {name!r} is not an integer: {d[name]!r}") from None
    codes = []
    for name in CCS_FIELDS:
        raw = d.pop(name)
        if raw == "":
            continue
        try:
            codes.append(int(raw))
        except ValueError:
            raise MissingField(f"row {row_num}: field {name!r} is not an integer: {raw!r}") from None
    return VisitRecord(ccs_codes=codes, **d)


def parse_visits(path, spec: CategoricalSpec) -> list[VisitRecord]:
    """Parse a cohort CSV, rejecting the whole file on the first malformed row.

    Row numbers in errors are 1-based counting the header as row 1.
    """
    records = []
    seen: dict[str, set[int]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingField("empty file: no header row") from None
        if header != COLUMNS:
            raise MissingField(f"bad header: {header[:4]}... expected {COLUMNS[:4]}...")
        for row_num, row in enumerate(reader, 2):
            rec = _record_from_row(row, row_num)
            try:
                rec.validate(spec, row=row_num)
            except UnknownCategoryLevel as e:
                raise UnknownCategoryLevel(e.field_name, e.value, row_num) from None
            prior = seen.setdefault(rec.patient_id, set())
            if rec.visit_seq in prior:
                raise DuplicatePatientSeq(
                    f"row {row_num}: patient {rec.patient_id!r} repeats visit_seq {rec.visit_seq}"
                )
            prior.add(rec.visit_seq)
            records.append(rec)
    # contiguity: each patient's seqs must be exactly 0..k-1
    for pid, seqs in seen.items():
        if seqs != set(range(len(seqs))):
            raise InvariantViolation(f"patient {pid!r}: visit_seq values {sorted(seqs)} are not contiguous from 0")
    return records


def write_visits(records: list[VisitRecord], path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS)
        for r in records:
            codes = [str(c) for c in r.ccs_codes]
            codes += [""] * (MAX_CODES_PER_VISIT - len(codes))
            w.writerow(
                [r.patient_id, r.visit_seq]
                + [getattr(r, n) for n in NUMERIC_FIELDS]
                + [getattr(r, n) for n in CATEGORICAL_FIELDS]
                + codes
                + [r.outcome]
            )


def validate_cohort(records: list[VisitRecord]) -> CohortSummary:
    """Count patients/visits/positives; raise on the first invariant violation."""
    seqs: dict[str, set[int]] = {}
    positives = 0
    for i, rec in enumerate(records):
        if not (1 <= len(rec.ccs_codes) <= MAX_CODES_PER_VISIT) or any(
            c not in VALID_CCS for c in rec.ccs_codes
        ):
            raise InvariantViolation(f"record {i}: bad ccs codes {rec.ccs_codes}")
        if not (AGE_MIN <= rec.age <= AGE_MAX):
            raise InvariantViolation(f"record {i}: age {rec.age} outside [{AGE_MIN}, {AGE_MAX}]")
        s = seqs.setdefault(rec.patient_id, set())
        if rec.visit_seq in s:
            raise InvariantViolation(f"record {i}: duplicate visit_seq for patient {rec.patient_id!r}")
        s.add(rec.visit_seq)
        positives += rec.outcome
    for pid, s in seqs.items():
        if s != set(range(len(s))):
            raise InvariantViolation(f"patient {pid!r}: non-contiguous visit_seq values")
    n = len(records)
    return CohortSummary(
        patients=len(seqs),
        visits=n,
        positives=positives,
        prevalence=(positives / n) if n else None,
    )
