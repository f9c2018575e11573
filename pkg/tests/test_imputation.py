import itertools
import json
import math
import warnings

import numpy as np
import pytest

from expovar.errors import DataError
from expovar.imputation import (
    T_MAX,
    T_MIN,
    CalibratedDistribution,
    ChainConstraintSet,
    ConditionalDistribution,
    ConstraintRule,
    ExposureClassDistribution,
    QuantityRuleset,
    ScoreVector,
    class_hash,
    class_key,
    compose_chain,
    derive_quantities,
    distribution_for_asset,
    fit_temperature,
    load_constraints,
    load_score_file,
    point_mass,
    softmax,
    truth_distribution,
)
from expovar.inventory import AssetRecord, AttributeSchema, AttributeSpec


@pytest.fixture
def schema():
    return AttributeSchema(
        (
            AttributeSpec("abutment_type", "categorical", ("D", "S")),
            AttributeSpec("bent_type", "categorical", ("MCB", "SCB", "PWB")),
            AttributeSpec("column_shape", "categorical", ("C", "R")),
            AttributeSpec("n_col", "discrete-count", ("1", "2", "3", "4")),
        )
    )


def test_softmax_symmetry():
    d = softmax(ScoreVector("a", (0.0, 0.0, 0.0)))
    assert d.probs == pytest.approx((1 / 3, 1 / 3, 1 / 3))


def test_softmax_known_values():
    d = softmax(ScoreVector("a", (2.0, 1.0, 0.0)), temperature=1.0)
    assert d.probs == pytest.approx(
        (0.665240955775, 0.244728471055, 0.0900305731704), abs=1e-10
    )


def test_softmax_high_temperature_softens():
    d = softmax(ScoreVector("a", (2.0, 1.0, 0.0)), temperature=1000.0)
    for p in d.probs:
        assert abs(p - 1 / 3) < 1e-3
    assert int(np.argmax(d.probs)) == 0


def test_softmax_sum_and_argmax_invariant():
    rng = np.random.default_rng(11)
    for _ in range(100):
        k = rng.integers(2, 7)
        scores = tuple(rng.normal(0, 5, size=k).tolist())
        t = float(rng.uniform(0.05, 20.0))
        d = softmax(ScoreVector("a", scores), t)
        assert sum(d.probs) == pytest.approx(1.0, abs=1e-12)
        assert int(np.argmax(d.probs)) == int(np.argmax(scores))


def test_softmax_extreme_scores_stable():
    d = softmax(ScoreVector("a", (1000.0, 0.0)), temperature=1.0)
    assert d.probs[0] == pytest.approx(1.0)
    assert math.isfinite(d.probs[1])


def test_softmax_rejects_bad_input():
    with pytest.raises(DataError):
        softmax(ScoreVector("a", (1.0, 2.0)), temperature=0.0)
    with pytest.raises(DataError):
        softmax(ScoreVector("a", (1.0, 2.0)), temperature=-1.0)
    with pytest.raises(DataError):
        ScoreVector("a", (1.0, float("nan")))


def _synthetic_validation(rng, true_t, n, k=3, spread=3.0):
    out = []
    for _ in range(n):
        scores = rng.normal(0.0, spread, size=k)
        probs = np.exp((scores - scores.max()) / true_t)
        probs /= probs.sum()
        label = int(rng.choice(k, p=probs))
        out.append((ScoreVector("a", tuple(scores.tolist())), label))
    return out


def test_fit_temperature_recovers_two():
    rng = np.random.default_rng(42)
    validation = _synthetic_validation(rng, true_t=2.0, n=10_000)
    fitted = fit_temperature(validation)
    assert 1.9 <= fitted <= 2.1


def test_fit_temperature_recovers_one():
    rng = np.random.default_rng(43)
    validation = _synthetic_validation(rng, true_t=1.0, n=10_000)
    fitted = fit_temperature(validation)
    assert 0.95 <= fitted <= 1.05


def test_fit_temperature_single_confident_sample_hits_lower_bound():
    validation = [(ScoreVector("a", (3.0, 0.0, -1.0)), 0)]
    with pytest.warns(RuntimeWarning):
        fitted = fit_temperature(validation)
    assert fitted == pytest.approx(T_MIN)


def test_fit_temperature_degenerate_scores():
    validation = [(ScoreVector("a", (0.5, 0.5, 0.5)), 1) for _ in range(5)]
    with pytest.warns(RuntimeWarning):
        fitted = fit_temperature(validation)
    assert fitted == 1.0


def test_fit_temperature_never_loses_to_unit_or_bounds():
    rng = np.random.default_rng(44)
    for _ in range(10):
        n = int(rng.integers(2, 40))
        validation = _synthetic_validation(rng, true_t=float(rng.uniform(0.3, 6.0)), n=n)
        scores = np.array([sv.scores for sv, _ in validation])
        true_idx = np.array([t for _, t in validation])

        def nll(t):
            z = scores / t
            m = z.max(axis=1, keepdims=True)
            lse = (m[:, 0] + np.log(np.exp(z - m).sum(axis=1)))
            return float(np.sum(lse - z[np.arange(len(z)), true_idx]))

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fitted = fit_temperature(validation)
        best = nll(fitted)
        assert best <= nll(1.0) + 1e-9
        assert best <= nll(T_MIN) + 1e-9
        assert best <= nll(T_MAX) + 1e-9


def test_fit_temperature_empty_rejected():
    with pytest.raises(DataError):
        fit_temperature([])


def _uniform(attribute, k):
    return CalibratedDistribution(attribute, tuple([1.0 / k] * k))


def test_compose_chain_sixteen_classes(schema):
    per_attribute = [
        _uniform("abutment_type", 2),
        CalibratedDistribution("bent_type", (0.5, 0.5, 0.0)),
        ConditionalDistribution(
            "column_shape",
            parent="bent_type",
            tables={"MCB": _uniform("column_shape", 2), "SCB": _uniform("column_shape", 2)},
        ),
        ConditionalDistribution(
            "n_col",
            parent="bent_type",
            tables={
                "MCB": CalibratedDistribution("n_col", (0.0, 0.5, 0.5, 0.0)),
                "SCB": CalibratedDistribution("n_col", (0.5, 0.5, 0.0, 0.0)),
            },
        ),
    ]
    dist = compose_chain(per_attribute, ChainConstraintSet(), schema, "B001")
    assert dist.n_classes == 16
    assert sum(dist.probs) == pytest.approx(1.0, abs=1e-12)
    assert dist.pruned_mass == 0.0


def test_compose_chain_constraint_forcing(schema):
    per_attribute = [
        point_mass("bent_type", "SCB", schema),
        _uniform("n_col", 4),
    ]
    constraints = ChainConstraintSet(
        (ConstraintRule("bent_type", "SCB", "n_col", ("1",)),)
    )
    dist = compose_chain(per_attribute, constraints, schema, "B001")
    for label, p in dist.items():
        assert label["n_col"] == "1"
    assert dist.probs == pytest.approx((1.0,))
    assert dist.pruned_mass == pytest.approx(0.75)


def test_compose_chain_all_known_single_class(schema):
    per_attribute = [
        point_mass("abutment_type", "S", schema),
        point_mass("bent_type", "MCB", schema),
        point_mass("n_col", "3", schema),
    ]
    dist = compose_chain(per_attribute, ChainConstraintSet(), schema, "B001")
    assert dist.n_classes == 1
    assert dist.probs == (1.0,)
    assert dist.label(0) == {"abutment_type": "S", "bent_type": "MCB", "n_col": "3"}


def test_compose_chain_prune_everything_rejected(schema):
    per_attribute = [
        point_mass("bent_type", "SCB", schema),
        point_mass("n_col", "4", schema),
    ]
    constraints = ChainConstraintSet(
        (ConstraintRule("bent_type", "SCB", "n_col", ("1",)),)
    )
    with pytest.raises(DataError):
        compose_chain(per_attribute, constraints, schema, "B001")


def test_compose_chain_missing_conditional_table(schema):
    per_attribute = [
        CalibratedDistribution("bent_type", (0.6, 0.4, 0.0)),
        ConditionalDistribution(
            "n_col", parent="bent_type", tables={"MCB": _uniform("n_col", 4)}
        ),
    ]
    with pytest.raises(DataError) as err:
        compose_chain(per_attribute, ChainConstraintSet(), schema, "B001")
    assert "SCB" in str(err.value)


def test_compose_chain_zero_prob_parent_needs_no_table(schema):
    per_attribute = [
        CalibratedDistribution("bent_type", (1.0, 0.0, 0.0)),
        ConditionalDistribution(
            "n_col", parent="bent_type", tables={"MCB": _uniform("n_col", 4)}
        ),
    ]
    dist = compose_chain(per_attribute, ChainConstraintSet(), schema, "B001")
    assert dist.n_classes == 4


def test_compose_chain_matches_brute_force():
    rng = np.random.default_rng(7)
    for trial in range(25):
        n_attr = int(rng.integers(2, 5))
        specs = []
        for i in range(n_attr):
            k = int(rng.integers(2, 5))
            specs.append(
                AttributeSpec(f"a{i}", "categorical", tuple(f"v{j}" for j in range(k)))
            )
        schema = AttributeSchema(tuple(specs))

        per_attribute = []
        tables_by_attr = {}
        for i, spec in enumerate(specs):
            k = len(spec.allowed_values)
            if i > 0 and rng.random() < 0.4:
                parent = specs[int(rng.integers(0, i))]
                tables = {}
                for pv in parent.allowed_values:
                    p = rng.dirichlet(np.ones(k))
                    tables[pv] = CalibratedDistribution(spec.name, tuple(p.tolist()))
                per_attribute.append(
                    ConditionalDistribution(spec.name, parent.name, tables)
                )
                tables_by_attr[spec.name] = (parent.name, tables)
            else:
                p = rng.dirichlet(np.ones(k))
                dist = CalibratedDistribution(spec.name, tuple(p.tolist()))
                per_attribute.append(dist)
                tables_by_attr[spec.name] = (None, dist)

        rules = []
        if rng.random() < 0.7:
            a, b = rng.choice(n_attr, size=2, replace=False)
            allowed = tuple(
                v for v in specs[b].allowed_values if rng.random() < 0.7
            ) or specs[b].allowed_values
            rules.append(
                ConstraintRule(
                    specs[a].name,
                    str(rng.choice(specs[a].allowed_values)),
                    specs[b].name,
                    allowed,
                )
            )
        constraints = ChainConstraintSet(tuple(rules))

        # brute force over the raw product
        names = [s.name for s in specs]
        expected = {}
        for combo in itertools.product(*[s.allowed_values for s in specs]):
            label = dict(zip(names, combo))
            p = 1.0
            for name, value in label.items():
                parent, obj = tables_by_attr[name]
                probs = obj.probs if parent is None else obj[label[parent]].probs
                p *= probs[schema.get(name).allowed_values.index(value)]
            if p > 0 and constraints.permits(label):
                expected[combo] = p
        total = sum(expected.values())
        try:
            dist = compose_chain(per_attribute, constraints, schema, "B")
        except DataError:
            assert total == 0.0
            continue
        got = {c: p for c, p in zip(dist.classes, dist.probs)}
        assert set(got) == set(expected)
        for combo, p in expected.items():
            assert got[combo] == pytest.approx(p / total, rel=1e-9)


def test_class_key_and_hash_are_order_independent():
    label1 = {"bent_type": "MCB", "abutment_type": "S"}
    label2 = {"abutment_type": "S", "bent_type": "MCB"}
    assert class_key(label1) == class_key(label2) == "abutment_type=S|bent_type=MCB"
    assert class_hash(label1) == class_hash(label2)
    assert len(class_hash(label1)) == 8


def test_derive_quantities_multi_column():
    asset = AssetRecord("B001", 34.0, -118.0, side_values={"n_spans": 2})
    label = {"bent_type": "MCB", "n_col": "3", "abutment_type": "D"}
    q = derive_quantities(asset, label)
    assert q["column"] == 3
    assert q["pier_wall"] == 0
    assert q["joint_seal"] == 0 and q["bearing"] == 0 and q["abutment_seat"] == 0


def test_derive_quantities_single_span():
    asset = AssetRecord("B001", 34.0, -118.0, side_values={"n_spans": 1})
    q = derive_quantities(asset, {"abutment_type": "S"})
    assert q["column"] == 0
    assert q["pier_wall"] == 0
    assert q["joint_seal"] == 1 and q["bearing"] == 4 and q["abutment_seat"] == 2


def test_derive_quantities_pier_wall():
    asset = AssetRecord("B001", 34.0, -118.0, side_values={"n_spans": 4})
    q = derive_quantities(asset, {"bent_type": "PWB", "abutment_type": "D"})
    assert q["pier_wall"] == 3
    assert q["column"] == 0


def test_derive_quantities_seat_rule_scales_with_spans():
    asset = AssetRecord("B001", 34.0, -118.0, side_values={"n_spans": 3})
    ruleset = QuantityRuleset(joint_seals_per_span=2, bearings_per_span=6)
    q = derive_quantities(asset, {"bent_type": "SCB", "abutment_type": "S"}, ruleset)
    assert q["joint_seal"] == 6
    assert q["bearing"] == 18
    assert q["abutment_seat"] == 2
    assert q["column"] == 2


def test_derive_quantities_known_counts_win():
    asset = AssetRecord(
        "B001", 34.0, -118.0, side_values={"n_spans": 2}, component_quantities={"column": 8}
    )
    q = derive_quantities(asset, {"bent_type": "SCB", "abutment_type": "D"})
    assert q["column"] == 8


def test_derive_quantities_missing_spans_rejected():
    asset = AssetRecord("B001", 34.0, -118.0)
    with pytest.raises(DataError):
        derive_quantities(asset, {"bent_type": "SCB", "abutment_type": "D"})


def test_score_file_roundtrip(tmp_path, schema):
    scores = {
        "chain": ["abutment_type", "bent_type", "n_col"],
        "temperatures": {"abutment_type": 1.5},
        "assets": {
            "B001": {
                "abutment_type": {"scores": [1.0, 0.0]},
                "bent_type": {"probs": [0.7, 0.3, 0.0]},
                "n_col": {
                    "parent": "bent_type",
                    "tables": {
                        "MCB": {"probs": [0.0, 0.6, 0.4, 0.0]},
                        "SCB": {"probs": [1.0, 0.0, 0.0, 0.0]},
                    },
                },
            }
        },
    }
    sp = tmp_path / "scores.json"
    sp.write_text(json.dumps(scores), encoding="utf-8")
    cp = tmp_path / "constraints.json"
    cp.write_text(
        json.dumps({"rules": [{"when": {"bent_type": "SCB"}, "then": {"n_col": ["1"]}}]}),
        encoding="utf-8",
    )
    sf = load_score_file(sp, schema)
    constraints = load_constraints(cp, schema)
    asset = AssetRecord("B001", 34.0, -118.0)
    dist = distribution_for_asset(sf, asset, schema, constraints)
    assert sum(dist.probs) == pytest.approx(1.0)
    # 2 abutments x (MCB: 2 n_col choices + SCB: 1 n_col choice) = 6 classes
    assert dist.n_classes == 6
    for label, _ in dist.items():
        if label["bent_type"] == "SCB":
            assert label["n_col"] == "1"


def test_known_attribute_beats_scores(tmp_path, schema):
    scores = {
        "chain": ["bent_type"],
        "assets": {"B001": {"bent_type": {"probs": [0.2, 0.5, 0.3]}}},
    }
    sp = tmp_path / "scores.json"
    sp.write_text(json.dumps(scores), encoding="utf-8")
    sf = load_score_file(sp, schema)
    asset = AssetRecord("B001", 34.0, -118.0, known_attributes={"bent_type": "PWB"})
    dist = distribution_for_asset(sf, asset, schema, ChainConstraintSet())
    assert dist.n_classes == 1
    assert dist.label(0) == {"bent_type": "PWB"}


def test_missing_scores_for_unknown_attribute(tmp_path, schema):
    scores = {"chain": ["bent_type"], "assets": {}}
    sp = tmp_path / "scores.json"
    sp.write_text(json.dumps(scores), encoding="utf-8")
    sf = load_score_file(sp, schema)
    asset = AssetRecord("B001", 34.0, -118.0)
    with pytest.raises(DataError):
        distribution_for_asset(sf, asset, schema, ChainConstraintSet())


def test_truth_distribution_one_hot(schema):
    asset = AssetRecord(
        "B001",
        34.0,
        -118.0,
        known_attributes={"abutment_type": "D"},
        ground_truth_attributes={"bent_type": "MCB"},
    )
    dist = truth_distribution(asset, ("abutment_type", "bent_type"), schema)
    assert dist.n_classes == 1 and dist.probs == (1.0,)
    assert dist.label(0) == {"abutment_type": "D", "bent_type": "MCB"}
    with pytest.raises(DataError):
        truth_distribution(asset, ("abutment_type", "bent_type", "n_col"), schema)


def test_exposure_distribution_validation():
    with pytest.raises(DataError):
        ExposureClassDistribution("B", ("a",), (("x",), ("x",)), (0.5, 0.5))
    with pytest.raises(DataError):
        ExposureClassDistribution("B", ("a",), (("x",),), (0.5,))
