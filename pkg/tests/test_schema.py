import pytest

from edrisk import schema
from edrisk.schema import (
    CategoricalSpec,
    CcsOutOfRange,
    DuplicatePatientSeq,
    InvariantViolation,
    MissingField,
    SpecFormatError,
    UnknownCategoryLevel,
    VisitRecord,
    default_spec,
    parse_visits,
    validate_cohort,
    write_visits,
)

SPEC = default_spec()


def make_record(pid="P1", seq=0, codes=(5,), outcome=0, **overrides):
    kwargs = dict(
        patient_id=pid,
        visit_seq=seq,
        year=2007,
        age=14,
        zip_code=90210,
        patient_county=12,
        facility_id=33,
        service_year=2007,
        sex="sex_0",
        race="race_1",
        insurance="insurance_2",
        disposition="disposition_0",
        urban="urban_1",
        disposition_ed="disposition_ed_3",
        facility_county_ed="facility_county_ed_10",
        payer_ed="payer_ed_7",
        ccs_codes=list(codes),
        outcome=outcome,
    )
    kwargs.update(overrides)
    return VisitRecord(**kwargs)


class TestCategoricalSpec:
    def test_default_spec_cardinalities(self):
        for name, want in schema.CATEGORICAL_FIELDS.items():
            assert SPEC.width(name) == want
        assert SPEC.one_hot_width == 4 + 7 + 6 + 5 + 3 + 22 + 55 + 20

    def test_save_load_round_trip(self, tmp_path):
        path = tmp_path / "spec.txt"
        SPEC.save(path)
        loaded = CategoricalSpec.load(path)
        assert loaded.levels == SPEC.levels

    def test_wrong_cardinality_rejected(self):
        levels = {k: list(v) for k, v in SPEC.levels.items()}
        levels["sex"].append("sex_extra")
        with pytest.raises(SpecFormatError):
            CategoricalSpec(levels)

    def test_duplicate_level_rejected(self):
        levels = {k: list(v) for k, v in SPEC.levels.items()}
        levels["urban"] = ["u", "u", "v"]
        with pytest.raises(SpecFormatError):
            CategoricalSpec(levels)

    def test_missing_field_rejected(self):
        levels = {k: list(v) for k, v in SPEC.levels.items()}
        del levels["race"]
        with pytest.raises(SpecFormatError):
            CategoricalSpec(levels)


class TestParse:
    def test_three_row_identity(self, tmp_path):
        records = [
            make_record("A", 0, (5, 662)),
            make_record("A", 1, (7,)),
            make_record("B", 0, (1, 2, 3, 4, 5, 6, 7), outcome=1),
        ]
        path = tmp_path / "cohort.csv"
        write_visits(records, path)
        parsed = parse_visits(path, SPEC)
        assert parsed == records

    def test_round_trip_random(self, tmp_path):
        import random

        rng = random.Random(0)
        records = []
        for p in range(30):
            k = rng.randint(1, 4)
            for j in range(k):
                n = rng.randint(1, 7)
                codes = [rng.choice(list(schema.VALID_CCS)) for _ in range(n)]
                records.append(
                    make_record(
                        f"P{p}",
                        j,
                        codes,
                        outcome=rng.randint(0, 1),
                        age=rng.randint(10, 19),
                        sex=f"sex_{rng.randint(0, 3)}",
                    )
                )
        path = tmp_path / "cohort.csv"
        write_visits(records, path)
        assert parse_visits(path, SPEC) == records

    def test_unknown_level_rejected_with_row(self, tmp_path):
        records = [make_record(), make_record("P2", 0, sex="Q")]
        path = tmp_path / "cohort.csv"
        write_visits(records, path)
        with pytest.raises(UnknownCategoryLevel) as exc:
            parse_visits(path, SPEC)
        assert exc.value.field_name == "sex"
        assert exc.value.row == 3

    def test_ccs_300_out_of_range(self, tmp_path):
        path = tmp_path / "cohort.csv"
        write_visits([make_record(codes=(300,))], path)
        with pytest.raises(CcsOutOfRange):
            parse_visits(path, SPEC)

    def test_mental_health_codes_valid(self, tmp_path):
        path = tmp_path / "cohort.csv"
        write_visits([make_record(codes=(662, 651, 285))], path)
        assert parse_visits(path, SPEC)[0].ccs_codes == [662, 651, 285]

    def test_duplicate_seq_rejected(self, tmp_path):
        path = tmp_path / "cohort.csv"
        write_visits([make_record("A", 0), make_record("A", 0)], path)
        with pytest.raises(DuplicatePatientSeq):
            parse_visits(path, SPEC)

    def test_non_contiguous_seq_rejected(self, tmp_path):
        path = tmp_path / "cohort.csv"
        write_visits([make_record("A", 0), make_record("A", 2)], path)
        with pytest.raises(InvariantViolation):
            parse_visits(path, SPEC)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "cohort.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(MissingField):
            parse_visits(path, SPEC)

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "cohort.csv"
        write_visits([make_record()], path)
        with open(path, "a") as f:
            f.write("P9,0,2007\n")
        with pytest.raises(MissingField):
            parse_visits(path, SPEC)

    def test_age_outside_cohort_rejected(self, tmp_path):
        path = tmp_path / "cohort.csv"
        write_visits([make_record(age=25)], path)
        with pytest.raises(InvariantViolation):
            parse_visits(path, SPEC)


class TestValidateCohort:
    def test_empty(self):
        summary = validate_cohort([])
        assert (summary.patients, summary.visits, summary.positives) == (0, 0, 0)
        assert summary.prevalence is None

    def test_direct_counts(self):
        records = [
            make_record("A", 0),
            make_record("A", 1, outcome=1),
            make_record("B", 0),
            make_record("B", 1),
        ]
        summary = validate_cohort(records)
        assert summary.patients == 2
        assert summary.visits == 4
        assert summary.prevalence == 0.25

    def test_prevalence_matches_direct_count(self):
        import random

        rng = random.Random(3)
        records = []
        for p in range(50):
            y = rng.randint(0, 1)
            for j in range(rng.randint(1, 3)):
                records.append(make_record(f"P{p}", j, outcome=y))
        summary = validate_cohort(records)
        assert summary.prevalence == sum(r.outcome for r in records) / len(records)

    def test_invariant_violation_reported(self):
        bad = make_record(age=42)
        with pytest.raises(InvariantViolation):
            validate_cohort([make_record(), bad])
