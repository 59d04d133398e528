from __future__ import annotations

import math
import random
import warnings

import numpy as np
import pytest

from minerlink.errors import DataError
from minerlink.matcher import (
    FEATURE_NAMES,
    DegenerateTrainingWarning,
    FeatureSpec,
    MissingLocationPolicy,
    RuleConfig,
    TrainConfig,
    extract_features,
    featurize_pairs,
    haversine_km,
    load_model,
    logistic_gradient,
    logistic_loss,
    model_from_json_dict,
    model_to_json_dict,
    predict,
    predict_pairs,
    rule_distance_clause,
    rule_match,
    rule_text_clause,
    save_model,
    text_cosine,
    train_classifier,
)
from minerlink.pairing import LabeledPair, PairKey, Provenance

from conftest import make_record
from synth import separable_corpus

MERIDIAN_DEGREE_KM = math.pi * 6371.0 / 180.0  # closed-form meridian arc
HALF_GREAT_CIRCLE_KM = math.pi * 6371.0


class TestHaversine:
    def test_identical_points_zero(self):
        assert haversine_km((44.9, -115.3), (44.9, -115.3)) == 0.0

    def test_one_degree_meridian_arc(self):
        d = haversine_km((0.0, 0.0), (1.0, 0.0))
        assert d == pytest.approx(MERIDIAN_DEGREE_KM, abs=1e-9)
        assert d == pytest.approx(111.195, abs=1e-3)

    def test_antipodal_half_circumference(self):
        d = haversine_km((0.0, 0.0), (0.0, 180.0))
        assert d == pytest.approx(HALF_GREAT_CIRCLE_KM, abs=1e-9)
        assert d == pytest.approx(20015.087, abs=1e-2)

    def test_symmetry_and_range_random(self):
        rng = random.Random(7)
        for _ in range(500):
            p1 = (rng.uniform(-90, 90), rng.uniform(-180, 180))
            p2 = (rng.uniform(-90, 90), rng.uniform(-180, 180))
            d = haversine_km(p1, p2)
            assert d == haversine_km(p2, p1)
            assert 0.0 <= d <= HALF_GREAT_CIRCLE_KM

    def test_cross_check_spherical_law_of_cosines(self):
        p1, p2 = (44.965, -115.318), (44.962, -115.312)
        cos_angle = math.sin(math.radians(p1[0])) * math.sin(math.radians(p2[0])) + math.cos(
            math.radians(p1[0])
        ) * math.cos(math.radians(p2[0])) * math.cos(math.radians(p2[1] - p1[1]))
        oracle = 6371.0 * math.acos(min(1.0, cos_angle))
        assert haversine_km(p1, p2) == pytest.approx(oracle, abs=1e-4)

    @pytest.mark.parametrize("bad", [(91.0, 0.0), (-90.5, 0.0), (0.0, 180.5), (0.0, -181.0)])
    def test_out_of_range_rejected(self, bad):
        with pytest.raises(ValueError, match="out of range"):
            haversine_km(bad, (0.0, 0.0))


def _oracle_trigram_cosine(a: str, b: str) -> float:
    """Brute-force trigram-count cosine, written independently of the library."""

    def grams(text):
        text = " ".join(text.casefold().split())
        if not text:
            return {}
        if len(text) < 3:
            return {text: 1}
        counts = {}
        for i in range(len(text) - 2):
            g = text[i : i + 3]
            counts[g] = counts.get(g, 0) + 1
        return counts

    ga, gb = grams(a), grams(b)
    dot = sum(c * gb.get(g, 0) for g, c in ga.items())
    na = math.sqrt(sum(c * c for c in ga.values()))
    nb = math.sqrt(sum(c * c for c in gb.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


class TestTextCosine:
    def test_identity(self):
        assert text_cosine("Eagle Mine", "Eagle Mine") == 1.0

    def test_disjoint_trigrams(self):
        assert text_cosine("abc", "xyz") == 0.0

    def test_empty_vs_anything(self):
        assert text_cosine("", "Eagle") == 0.0
        assert text_cosine("", "") == 0.0

    def test_yellow_pine_oracle_value(self):
        got = text_cosine("Yellow Pine", "Yellow Pine Deposit")
        expected = _oracle_trigram_cosine("Yellow Pine", "Yellow Pine Deposit")
        assert got == pytest.approx(expected, abs=1e-12)
        # 9 shared distinct trigrams, |a| = 3, |b| = sqrt(17)
        assert got == pytest.approx(3.0 / math.sqrt(17.0), abs=1e-12)
        assert 0.0 < got < 1.0

    def test_matches_oracle_on_random_strings(self):
        rng = random.Random(3)
        alphabet = "abcde "
        for _ in range(200):
            a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            assert text_cosine(a, b) == pytest.approx(_oracle_trigram_cosine(a, b), abs=1e-12)

    def test_case_and_whitespace_folding(self):
        assert text_cosine("Eagle  Mine", "eagle mine") == 1.0

    def test_bounded(self):
        assert 0.0 <= text_cosine("Yellow Pine", "Pine Yellow") <= 1.0


class TestRuleMatch:
    def _pair(self, name_a, name_b, loc_a, loc_b):
        a = make_record("m:1", [("site_name", name_a)], location=loc_a)
        b = make_record("u:1", [("site_name", name_b)], location=loc_b)
        return a, b

    def test_colocated_identical_names_match(self):
        a, b = self._pair("Eagle Mine", "Eagle Mine", (46.744, -87.887), (46.744, -87.887))
        assert rule_match(a, b) == 1

    def test_identical_names_ten_km_apart_rejected(self):
        a, b = self._pair("Eagle Mine", "Eagle Mine", (46.744, -87.887), (46.834, -87.887))
        assert haversine_km(a.location, b.location) > 5.0
        assert rule_match(a, b) == 0

    def test_close_but_dissimilar_names_rejected(self):
        a, b = self._pair("Eagle Mine", "Dunka Road", (46.744, -87.887), (46.753, -87.887))
        assert haversine_km(a.location, b.location) < 5.0
        assert rule_match(a, b) == 0

    def test_thresholds_inclusive(self):
        a, b = self._pair("Eagle Mine", "Eagle Mine", (46.744, -87.887), (46.780, -87.887))
        boundary = haversine_km(a.location, b.location)
        cfg = RuleConfig(max_distance_km=boundary, min_cosine=1.0)
        assert rule_match(a, b, cfg) == 1  # distance == threshold, cosine == threshold

    def test_missing_location_text_only_waives_distance(self):
        a = make_record("m:1", [("site_name", "Eagle Mine")])
        b = make_record("u:1", [("site_name", "Eagle Mine")], location=(46.744, -87.887))
        assert rule_match(a, b, RuleConfig()) == 1

    def test_missing_location_reject_policy(self):
        a = make_record("m:1", [("site_name", "Eagle Mine")])
        b = make_record("u:1", [("site_name", "Eagle Mine")], location=(46.744, -87.887))
        cfg = RuleConfig(missing_location_policy=MissingLocationPolicy.REJECT)
        assert rule_match(a, b, cfg) == 0

    def test_no_name_fields_means_no_text_match(self):
        a = make_record("m:1", [("state", "ID")], location=(44.0, -115.0))
        b = make_record("u:1", [("state", "ID")], location=(44.0, -115.0))
        assert rule_match(a, b) == 0

    def test_equals_conjunction_of_clauses(self, yellow_pine_mrds, yellow_pine_usmin):
        cases = [
            self._pair("Eagle Mine", "Eagle Mine", (46.744, -87.887), (46.744, -87.887)),
            self._pair("Eagle Mine", "Eagle Mine", (46.744, -87.887), (46.9, -87.887)),
            self._pair("Eagle Mine", "Dunka Road", (46.744, -87.887), (46.745, -87.887)),
            (yellow_pine_mrds, yellow_pine_usmin),
        ]
        cfg = RuleConfig()
        for a, b in cases:
            expected = int(rule_distance_clause(a, b, cfg) and rule_text_clause(a, b, cfg))
            assert rule_match(a, b, cfg) == expected

    def test_config_validation(self):
        with pytest.raises(DataError):
            RuleConfig(max_distance_km=0.0)
        with pytest.raises(DataError):
            RuleConfig(min_cosine=1.5)


class TestFeatures:
    def test_identical_located_records(self, yellow_pine_mrds):
        fv = extract_features(yellow_pine_mrds, yellow_pine_mrds)
        assert fv.name_levenshtein_sim == 1.0
        assert fv.name_token_jaccard == 1.0
        assert fv.trigram_cosine == 1.0
        assert fv.log1p_haversine_km == 0.0
        assert fv.location_missing == 0.0
        assert fv.shared_attr_agreement == 1.0

    def test_both_locations_missing(self):
        a = make_record("m:1", [("site_name", "Eagle")])
        b = make_record("u:1", [("site_name", "Eagle")])
        fv = extract_features(a, b)
        assert fv.location_missing == 1.0
        assert fv.log1p_haversine_km == 0.0

    def test_fixture_pair_against_hand_computed_oracle(self, yellow_pine_mrds, yellow_pine_usmin):
        fv = extract_features(yellow_pine_mrds, yellow_pine_usmin)
        # name fields resolve to "yellow pine" vs "yellow pine deposit"
        assert fv.name_levenshtein_sim == pytest.approx(1.0 - 8.0 / 19.0, abs=1e-12)
        assert fv.name_token_jaccard == pytest.approx(2.0 / 3.0, abs=1e-12)
        a_text = "Yellow Pine 44.965 -115.318 Tungsten ID"
        b_text = "Yellow Pine Deposit 44.962 -115.312 Tungsten"
        assert fv.trigram_cosine == pytest.approx(_oracle_trigram_cosine(a_text, b_text), abs=1e-12)
        assert fv.log1p_haversine_km == pytest.approx(
            math.log1p(haversine_km((44.965, -115.318), (44.962, -115.312))), abs=1e-12
        )
        assert fv.location_missing == 0.0
        assert fv.commodity_jaccard == 1.0  # Tungsten on both sides
        assert fv.shared_attr_agreement == 0.0  # schemas share no attribute names

    def test_symmetry_exact(self, yellow_pine_mrds, yellow_pine_usmin):
        records, pairs = separable_corpus(40, seed=5)
        cases = [(records[p.key.uri_1], records[p.key.uri_2]) for p in pairs]
        cases.append((yellow_pine_mrds, yellow_pine_usmin))
        for a, b in cases:
            assert extract_features(a, b) == extract_features(b, a)

    def test_multi_valued_commodities(self):
        a = make_record("m:1", [("site_name", "X"), ("commod1", "Copper"), ("commod2", "Nickel")])
        b = make_record("u:1", [("site_name", "Y"), ("Commodity", "Nickel; Copper")])
        fv = extract_features(a, b)
        assert fv.commodity_jaccard == 1.0

    def test_per_source_name_fields(self):
        spec = FeatureSpec(name_fields_by_source={"m": ("depname",)})
        a = make_record("m:1", [("depname", "Eagle"), ("site_name", "Wrong")])
        b = make_record("u:1", [("site_name", "Eagle")])
        fv = extract_features(a, b, spec)
        assert fv.name_levenshtein_sim == 1.0

    def test_featurize_pairs_unresolved_uri(self, yellow_pine_mrds):
        with pytest.raises(DataError, match="unresolved"):
            featurize_pairs([PairKey("missing:1", "missing:2")], {"m:1": yellow_pine_mrds})

    def test_bounded_components(self):
        records, pairs = separable_corpus(60, seed=9)
        features = featurize_pairs([p.key for p in pairs], records)
        bounded = [0, 1, 2, 4, 5, 6]  # all but log1p distance
        assert float(features[:, bounded].min()) >= 0.0
        assert float(features[:, bounded].max()) <= 1.0
        assert float(features[:, 3].min()) >= 0.0
        assert np.isfinite(features).all()


class TestGradient:
    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n, k = int(rng.integers(5, 40)), len(FEATURE_NAMES)
            z = rng.normal(size=(n, k))
            y = rng.integers(0, 2, size=n).astype(float)
            w = rng.normal(scale=0.5, size=k)
            b = float(rng.normal())
            wd = float(rng.uniform(0, 0.1))
            grad_w, grad_b = logistic_gradient(w, b, z, y, wd)
            eps = 1e-6
            for j in range(k):
                delta = np.zeros(k)
                delta[j] = eps
                numeric = (logistic_loss(w + delta, b, z, y, wd) - logistic_loss(w - delta, b, z, y, wd)) / (2 * eps)
                assert abs(grad_w[j] - numeric) <= 1e-5 * max(1.0, abs(numeric))
            numeric_b = (logistic_loss(w, b + eps, z, y, wd) - logistic_loss(w, b - eps, z, y, wd)) / (2 * eps)
            assert abs(grad_b - numeric_b) <= 1e-5 * max(1.0, abs(numeric_b))


class TestTraining:
    def test_separable_corpus_perfect_training_accuracy(self):
        records, pairs = separable_corpus(400, seed=2)
        model = train_classifier(pairs, records)
        results = predict_pairs(model, [p.key for p in pairs], records)
        truth = {p.key: p.label for p in pairs}
        accuracy = sum(label == truth[key] for key, label, _ in results) / len(results)
        assert accuracy == 1.0

    def test_all_nonmatch_training_predicts_all_zero(self):
        records, pairs = separable_corpus(400, seed=4)
        nonmatches = [p for p in pairs if p.label == 0]
        with pytest.warns(DegenerateTrainingWarning, match="single class"):
            model = train_classifier(nonmatches, records)
        results = predict_pairs(model, [p.key for p in pairs], records)
        assert all(label == 0 for _, label, _ in results)

    def test_zero_epochs_gives_zero_model(self, yellow_pine_mrds, yellow_pine_usmin):
        records, pairs = separable_corpus(20, seed=6)
        model = train_classifier(pairs, records, TrainConfig(epochs=0))
        assert not model.weights.any() and model.bias == 0.0
        label, probability = predict(model, yellow_pine_mrds, yellow_pine_usmin)
        assert probability == 0.5
        assert label == 0  # tie at the threshold resolves to non-match

    def test_deterministic_given_seed(self):
        records, pairs = separable_corpus(120, seed=8)
        m1 = train_classifier(pairs, records, TrainConfig(seed=77))
        m2 = train_classifier(pairs, records, TrainConfig(seed=77))
        assert np.array_equal(m1.weights, m2.weights) and m1.bias == m2.bias
        m3 = train_classifier(pairs, records, TrainConfig(seed=78))
        assert not np.array_equal(m1.weights, m3.weights)

    def test_full_batch_loss_non_increasing(self):
        records, pairs = separable_corpus(60, seed=3)
        keys = [p.key for p in pairs]
        features = featurize_pairs(keys, records)
        labels = np.array([p.label for p in pairs], dtype=float)
        losses = []
        for epochs in range(0, 8):
            hyper = TrainConfig(epochs=epochs, batch_size=len(pairs), learning_rate=0.05, seed=1)
            model = train_classifier(pairs, records, hyper)
            z = (features - model.feature_means) / model.feature_stds
            losses.append(logistic_loss(model.weights, model.bias, z, labels, hyper.weight_decay))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_full_batch_loss_non_increasing_on_random_data(self):
        from minerlink.matcher import fit_on_matrix

        rng = np.random.default_rng(19)
        for _ in range(10):
            n = int(rng.integers(10, 80))
            features = rng.normal(size=(n, len(FEATURE_NAMES)))
            labels = rng.integers(0, 2, size=n).astype(float)
            losses = []
            for epochs in range(0, 6):
                hyper = TrainConfig(epochs=epochs, batch_size=n, learning_rate=0.05, seed=2)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateTrainingWarning)
                    model = fit_on_matrix(features, labels, hyper)
                z = (features - model.feature_means) / model.feature_stds
                losses.append(logistic_loss(model.weights, model.bias, z, labels, hyper.weight_decay))
            assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_constant_features_frozen(self):
        # no record has a location: the distance and missing-flag features are constant
        records = {}
        pairs = []
        rng = random.Random(12)
        for i in range(40):
            a = make_record(f"a:{i:03d}", [("site_name", f"Site {rng.randint(0, 20)}")])
            b = make_record(f"b:{i:03d}", [("site_name", f"Site {rng.randint(0, 20)}")])
            records[a.uri], records[b.uri] = a, b
            pairs.append(LabeledPair(PairKey.of(a.uri, b.uri), rng.randint(0, 1), Provenance.LLM))
        model = train_classifier(pairs, records)
        idx_distance = FEATURE_NAMES.index("log1p_haversine_km")
        idx_missing = FEATURE_NAMES.index("location_missing")
        for idx in (idx_distance, idx_missing):
            assert model.frozen_features[idx]
            assert model.weights[idx] == 0.0
            assert model.feature_stds[idx] == 1.0

    def test_best_epoch_selection_returns_some_epoch_state(self):
        records, pairs = separable_corpus(160, seed=13)
        train, val = pairs[: int(len(pairs) * 0.75)], pairs[int(len(pairs) * 0.75) :]
        selected = train_classifier(train, records, TrainConfig(epochs=6, seed=5), val_pairs=val)
        candidates = [
            train_classifier(train, records, TrainConfig(epochs=e, seed=5)) for e in range(1, 7)
        ]
        assert any(
            np.array_equal(selected.weights, c.weights) and selected.bias == c.bias
            for c in candidates
        )

    def test_empty_training_set_rejected(self):
        with pytest.raises(DataError, match="empty"):
            train_classifier([], {})

    def test_hyper_validation(self):
        with pytest.raises(DataError):
            TrainConfig(epochs=-1)
        with pytest.raises(DataError):
            TrainConfig(learning_rate=0.0)


class TestPredict:
    def test_constructed_positive_margin(self, yellow_pine_mrds):
        # hand-built model: logit = 4 * name_levenshtein_sim + 1, so an
        # identical pair scores sigmoid(5) = 0.9933...
        from minerlink.matcher import ClassifierModel

        k = len(FEATURE_NAMES)
        weights = np.zeros(k)
        weights[FEATURE_NAMES.index("name_levenshtein_sim")] = 4.0
        model = ClassifierModel(
            weights=weights,
            bias=1.0,
            feature_means=np.zeros(k),
            feature_stds=np.ones(k),
            frozen_features=np.zeros(k, dtype=bool),
            hyper=TrainConfig(),
            feature_spec=FeatureSpec(),
        )
        label, probability = predict(model, yellow_pine_mrds, yellow_pine_mrds)
        assert label == 1
        assert probability == pytest.approx(1.0 / (1.0 + math.exp(-5.0)), abs=1e-12)
        assert probability > 0.99

    def test_swap_invariance(self, yellow_pine_mrds, yellow_pine_usmin):
        records, pairs = separable_corpus(40, seed=22)
        model = train_classifier(pairs, records)
        assert predict(model, yellow_pine_mrds, yellow_pine_usmin) == predict(
            model, yellow_pine_usmin, yellow_pine_mrds
        )


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        records, pairs = separable_corpus(60, seed=31)
        spec = FeatureSpec(name_fields_by_source={"a": ("site_name",)})
        model = train_classifier(pairs, records, TrainConfig(seed=3), feature_spec=spec)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert np.array_equal(loaded.feature_means, model.feature_means)
        assert np.array_equal(loaded.feature_stds, model.feature_stds)
        assert np.array_equal(loaded.frozen_features, model.frozen_features)
        assert loaded.hyper == model.hyper
        assert loaded.feature_spec == model.feature_spec
        assert loaded.decision_threshold == model.decision_threshold

    def test_unsupported_version_rejected(self):
        records, pairs = separable_corpus(20, seed=32)
        doc = model_to_json_dict(train_classifier(pairs, records))
        doc["format_version"] = 99
        with pytest.raises(DataError, match="format_version"):
            model_from_json_dict(doc)
