import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recoverynet.behavior import (
    BUILTIN_MODELS,
    INCOME_BANDS,
    PD_BM_HARRIS,
    PD_BM_OTHER,
    FeatureError,
    ImputationError,
    LogitModel,
    SeparationError,
    SurveyRecord,
    canonical_name,
    extract_features,
    fit_logit,
    income_band,
    income_to_dollars,
    linear_predictor,
    load_model,
    preprocess_survey,
    read_survey_csv,
    return_probability,
    return_probability_batch,
    save_model,
)
from recoverynet.geo import GeoPoint
from recoverynet.network import HumanNode, Layer, NodeId, PhysicalNode, SocialNode, build_network
from support import make_nodes, pairwise_km

ZERO_HARRIS = {"q_house": 0, "q_human_a": 0, "q_social_e": 0, "q_physical_b": 0}
ZERO_OTHER = {"q_income": 0, "q_human_b": 0, "q_social_c": 0, "q_physical_b": 0}


def logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_harris_hand_value():
    x = {"q_house": 1, "q_human_a": 1, "q_social_e": 0, "q_physical_b": 1}
    assert linear_predictor(PD_BM_HARRIS, x) == pytest.approx(2.425, abs=1e-12)
    assert return_probability(PD_BM_HARRIS, x) == pytest.approx(0.9187, abs=1e-4)
    assert return_probability(PD_BM_HARRIS, x) == pytest.approx(logistic(-1.904 + 1.520 + 1.638 + 1.171), abs=1e-15)


def test_other_hand_value():
    x = dict(ZERO_OTHER, q_income=120_000)
    assert linear_predictor(PD_BM_OTHER, x) == pytest.approx(0.333, abs=1e-9)
    assert return_probability(PD_BM_OTHER, x) == pytest.approx(0.5825, abs=1e-3)


def test_comma_spelling_accepted():
    x = {"q_house": 1, "q_human,a": 1, "q_social,e": 0, "q_physical,b": 1}
    assert return_probability(PD_BM_HARRIS, x) == pytest.approx(0.9187, abs=1e-4)
    assert canonical_name("q_physical,b") == "q_physical_b"


def test_zero_model_is_one_half():
    m = LogitModel("zero", 0.0, (("q_house", 0.0), ("q_human_a", 0.0), ("q_social_a", 0.0), ("q_physical_a", 0.0)))
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = {"q_house": float(rng.integers(2)), "q_human_a": rng.random(), "q_social_a": rng.random(),
             "q_physical_a": rng.random()}
        assert return_probability(m, x) == 0.5


def test_missing_feature_rejected():
    with pytest.raises(FeatureError):
        return_probability(PD_BM_HARRIS, {"q_house": 1})


@pytest.mark.parametrize("name,value", [("q_house", 0.5), ("q_human_a", 1.2), ("q_social_e", -0.1),
                                        ("q_physical_b", float("nan"))])
def test_out_of_range_rejected(name, value):
    with pytest.raises(FeatureError):
        return_probability(PD_BM_HARRIS, dict(ZERO_HARRIS, **{name: value}))


def test_negative_income_rejected():
    with pytest.raises(FeatureError):
        return_probability(PD_BM_OTHER, dict(ZERO_OTHER, q_income=-1))


def test_extra_features_warn():
    with pytest.warns(UserWarning, match="q_age"):
        p = return_probability(PD_BM_HARRIS, dict(ZERO_HARRIS, q_age=40))
    assert p == pytest.approx(logistic(-1.904))


def test_model_schema_validation():
    with pytest.raises(FeatureError):
        LogitModel("bad", 0.0, (("q_house", 1.0), ("q_human_a", 1.0), ("q_social_a", 1.0)))
    with pytest.raises(FeatureError):
        LogitModel("bad", 0.0, (("q_human_a", 1.0), ("q_human_b", 1.0), ("q_social_a", 1.0), ("q_physical_a", 1.0)))
    with pytest.raises(FeatureError):
        LogitModel("bad", 0.0, (("q_weather", 1.0), ("q_human_a", 1.0), ("q_social_a", 1.0), ("q_physical_a", 1.0)))


def test_builtin_models():
    assert set(BUILTIN_MODELS) == {"PD-BM-Harris", "PD-BM-Other"}
    assert not PD_BM_HARRIS.income_in_model
    assert PD_BM_OTHER.income_in_model
    assert PD_BM_OTHER.feature_for("q_social") == "q_social_c"


def test_model_json_round_trip(tmp_path):
    path = tmp_path / "m.json"
    save_model(PD_BM_OTHER, path)
    assert load_model(path) == PD_BM_OTHER


def test_income_bands():
    assert len(INCOME_BANDS) == 9
    assert income_band(0) == 0
    assert income_band(14_999.99) == 0
    assert income_band(15_000) == 1
    assert income_band(119_999) == 7
    assert income_band(120_000) == 8
    assert income_band(1e7) == 8
    assert income_to_dollars("<15K") == 15_000
    assert income_to_dollars(">120K") == 120_000
    assert income_to_dollars("60-75K") == 67_500
    assert income_to_dollars("2") == 22_500
    assert income_to_dollars(51_000) == 51_000


feature_st = st.fixed_dictionaries({
    "q_income": st.floats(0, 250_000),
    "q_human_b": st.floats(0, 1),
    "q_social_c": st.floats(0, 1),
    "q_physical_b": st.floats(0, 1),
})


@given(feature_st, st.sampled_from(sorted(ZERO_OTHER)), st.floats(0.01, 0.5))
def test_monotone_in_coefficient_sign(x, name, frac):
    coef = dict(PD_BM_OTHER.coefficients)[name]
    hi = 250_000 if name == "q_income" else 1.0
    bumped = dict(x, **{name: x[name] + frac * (hi - x[name])})
    if bumped[name] == x[name]:
        return
    p0, p1 = return_probability(PD_BM_OTHER, x), return_probability(PD_BM_OTHER, bumped)
    assert (p1 >= p0) if coef > 0 else (p1 <= p0)


@given(feature_st, st.floats(-1, 1))
def test_feature_shift_absorbed_by_intercept(x, c):
    # Shift q_physical_b by c and move -c*coef into the intercept.
    coef = dict(PD_BM_OTHER.coefficients)["q_physical_b"]
    shifted = LogitModel("s", PD_BM_OTHER.intercept - c * coef, PD_BM_OTHER.coefficients)
    cols = {k: np.array([v]) for k, v in x.items()}
    cols_shift = dict(cols, q_physical_b=cols["q_physical_b"] + c)
    p0 = return_probability_batch(PD_BM_OTHER, cols)[0]
    p1 = return_probability_batch(shifted, cols_shift)[0]
    assert abs(p0 - p1) <= 1e-12


def test_batch_matches_scalar_bitwise():
    rng = np.random.default_rng(3)
    cols = {"q_house": rng.integers(0, 2, 50).astype(float), "q_human_a": rng.random(50),
            "q_social_e": rng.random(50), "q_physical_b": rng.random(50)}
    batch = return_probability_batch(PD_BM_HARRIS, cols)
    for i in range(50):
        assert batch[i] == return_probability(PD_BM_HARRIS, {k: v[i] for k, v in cols.items()})


# --- feature extraction -------------------------------------------------------

def tiny_network():
    o = GeoPoint(29.7, -95.4)
    near = GeoPoint(29.7045, -95.4)
    far = GeoPoint(29.9, -95.4)
    humans = [
        HumanNode(NodeId(Layer.HUMAN, 0), o, "A", 40_000.0, True),
        HumanNode(NodeId(Layer.HUMAN, 1), near, "A", 60_000.0, False),
        HumanNode(NodeId(Layer.HUMAN, 2), near, "A", 80_000.0, False),
        HumanNode(NodeId(Layer.HUMAN, 3), far, "A", 90_000.0, True),
    ]
    socials = [SocialNode(NodeId(Layer.SOCIAL, 0), o, "A", 10.0)]
    return build_network(humans, socials, [PhysicalNode(NodeId(Layer.PHYSICAL, 0), "A", o)], 1.0)


def test_isolated_home_features():
    net = tiny_network()
    f = extract_features(net, 3, np.zeros(4), np.array([0.7]), np.array([1.0]), PD_BM_HARRIS)
    assert f == {"q_house": 1.0, "q_human_a": 0.0, "q_social_e": 0.0, "q_physical_b": 1.0}


def test_neighbour_mean_feature():
    net = tiny_network()
    f = extract_features(net, 0, np.array([0, 1, 0, 1.0]), np.array([0.4]), np.array([0.2]), PD_BM_OTHER)
    assert f["q_human_b"] == 0.5
    assert f["q_social_c"] == 0.4
    assert f["q_physical_b"] == 0.2
    assert f["q_income"] == 40_000.0


def test_social_feature_capped_at_one():
    net = tiny_network()
    f = extract_features(net, 0, np.zeros(4), np.array([1.3]), np.array([0.2]), PD_BM_OTHER)
    assert f["q_social_c"] == 1.0


def test_features_match_brute_force():
    rng = np.random.default_rng(8)
    hs, ss, ps = make_nodes(rng, 20, 20, box=(29.7, 29.72, -95.4, -95.38))
    net = build_network(hs, ss, ps, 1.0)
    h_lv = rng.integers(0, 2, 20).astype(float)
    s_lv = rng.random(20)
    p_lv = rng.random(2)
    dh = pairwise_km([h.location for h in hs], [h.location for h in hs])
    ds = pairwise_km([h.location for h in hs], [s.location for s in ss])
    for i, h in enumerate(hs):
        nb = [j for j in range(20) if j != i and dh[i, j] <= 1.0]
        sn = [j for j in range(20) if ds[i, j] <= 1.0]
        f = extract_features(net, i, h_lv, s_lv, p_lv, PD_BM_HARRIS)
        assert f["q_human_a"] == pytest.approx(np.mean(h_lv[nb]) if nb else 0.0, abs=1e-15)
        assert f["q_social_e"] == pytest.approx(min(1.0, np.mean(s_lv[sn])) if sn else 0.0, abs=1e-15)
        assert f["q_physical_b"] == p_lv[net.human_physical[i]]
        assert f["q_house"] == float(h.owns_house)


# --- survey processing and fitting ----------------------------------------------

def rec(i, **v):
    return SurveyRecord(str(i), {canonical_name(k): val for k, val in v.items()})


def test_non_evacuees_dropped():
    out = preprocess_survey([rec(0, y_evacuate=0, y_return=1, q_house=1), rec(1, y_evacuate=1, y_return=0, q_house=0)])
    assert [r.respondent_id for r in out] == ["1"]


def test_mean_substitution():
    rs = [rec(i, y_evacuate=1, y_return=i % 2, q_social_a=v) for i, v in enumerate([0.2, None, 0.6])]
    out = preprocess_survey(rs)
    assert out[1].values["q_social_a"] == pytest.approx(0.4)


def test_unimputable_variable_named():
    rs = [rec(i, y_evacuate=1, y_return=1, q_social_b=None) for i in range(3)]
    with pytest.raises(ImputationError, match="q_social_b"):
        preprocess_survey(rs)


def test_imputation_preserves_means():
    rng = np.random.default_rng(5)
    names = ["q_house", "q_human_a", "q_social_c", "q_physical_b"]
    rs = []
    for i in range(50):
        v = {n: (None if rng.random() < 0.05 else float(rng.random() if n != "q_house" else rng.integers(2)))
             for n in names}
        rs.append(SurveyRecord(str(i), dict(v, y_evacuate=1.0, y_return=float(rng.integers(2)))))
    before = {n: np.mean([r.values[n] for r in rs if r.values[n] is not None]) for n in names}
    out = preprocess_survey(rs)
    for n in names:
        assert np.mean([r.values[n] for r in out]) == pytest.approx(before[n], abs=1e-12)
    assert all(v is not None for r in out for v in r.values.values())


def test_preprocess_idempotent_on_complete_data():
    rs = [rec(i, y_evacuate=1, y_return=i % 2, q_house=i % 3 == 0, q_human_a=i / 10) for i in range(10)]
    once = preprocess_survey(rs)
    twice = preprocess_survey(once)
    assert [r.values for r in once] == [r.values for r in twice]


def test_read_survey_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("respondent_id,y_evacuate,y_return,q_income,\"q_human,a\"\nr1,1,1,60-75K,0.5\nr2,1,,>120K,\n")
    rs = read_survey_csv(p)
    assert rs[0].values == {"y_evacuate": 1.0, "y_return": 1.0, "q_income": 67_500.0, "q_human_a": 0.5}
    assert rs[1].values["y_return"] is None and rs[1].values["q_human_a"] is None
    assert [r.respondent_id for r in preprocess_survey(rs)] == ["r1"]


def synthetic_logit(n, beta, rng):
    X = np.column_stack([rng.integers(0, 2, n), rng.random(n), rng.random(n), rng.random(n)]).astype(float)
    z = beta[0] + X @ np.array(beta[1:])
    y = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(float)
    return X, y


def test_fit_recovers_known_coefficients():
    rng = np.random.default_rng(42)
    truth = [-1.904, 1.520, 1.638, -1.756, 1.171]
    X, y = synthetic_logit(5000, truth, rng)
    names = ["q_house", "q_human_a", "q_social_e", "q_physical_b"]
    fit = fit_logit(None, names, X=X, y=y)
    est = [fit.model.intercept] + [v for _, v in fit.model.coefficients]
    se = [fit.model.intercept_se] + [v for _, v in fit.model.std_errors]
    for b, e, s in zip(truth, est, se):
        assert abs(b - e) < 3 * s
    assert np.all(np.abs(fit.gradient) < 1e-6 * fit.n)
    assert 0 < fit.mcfadden_r2 < 1
    assert fit.model.mcfadden_r2 == pytest.approx(fit.mcfadden_r2)


def test_fit_from_records_with_income_bands():
    rng = np.random.default_rng(1)
    rs = []
    for i in range(400):
        band = INCOME_BANDS[int(rng.integers(9))][0]
        x = {"q_income": band, "q_human_b": rng.random(), "q_social_c": rng.random(), "q_physical_b": rng.random()}
        z = -1 + 2e-5 * income_to_dollars(band) + x["q_human_b"]
        rs.append(SurveyRecord(str(i), dict(x, y_return=float(rng.random() < logistic(z)))))
    fit = fit_logit(rs, ["q_income", "q_human_b", "q_social_c", "q_physical_b"])
    assert fit.model.income_in_model
    assert np.all(np.abs(fit.gradient) < 1e-6 * fit.n)


def test_constant_dependent_rejected():
    X = np.random.default_rng(0).random((100, 1))
    with pytest.raises(SeparationError):
        fit_logit(None, ["q_human_a"], X=X, y=np.ones(100), require_schema=False)


def test_separated_data_rejected():
    x = np.linspace(0, 1, 200)
    y = (x > 0.5).astype(float)
    with pytest.raises(SeparationError):
        fit_logit(None, ["q_human_a"], X=x[:, None], y=y, require_schema=False)


def test_too_few_records_rejected():
    with pytest.raises(ValueError):
        fit_logit(None, ["q_human_a"], X=np.zeros((9, 1)), y=np.array([0, 1] * 4 + [1.0]), require_schema=False)


def test_intercept_only_balanced():
    rng = np.random.default_rng(0)
    y = rng.permutation(np.repeat([0.0, 1.0], 5000))
    fit = fit_logit(None, [], X=np.zeros((10_000, 0)), y=y, require_schema=False)
    assert abs(fit.model.intercept) < 0.05
