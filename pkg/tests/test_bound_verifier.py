import math

import pytest

from absdiff.bound_verifier import (
    check_early_stop_tv,
    check_forward_kl,
    check_lower_bound_divergence,
    check_score_envelope,
    check_sum_bound,
    check_time_derivative,
    default_manifest,
    render_table,
    reports_to_json,
    run_all_checks,
)
from absdiff.divergence_metrics import kl
from absdiff.forward_process import marginal
from absdiff.reverse_samplers import InitDist
from absdiff.score_oracle import ExactAnalyticScore, TransitionPair, score_analytic
from absdiff.state_space import (
    ModelSpec,
    maskfree_uniform_q0,
    point_q0,
    product_q0,
    uniform_q0,
)


def make_spec(S, d, q0=None, mask=None):
    return ModelSpec(S=S, d=d, mask=S - 1 if mask is None else mask,
                     q0=uniform_q0(S, d) if q0 is None else q0)


class DoubledScore:
    """Deliberately broken estimator: twice the exact score."""

    def __init__(self, spec):
        self.spec = spec
        self._base = ExactAnalyticScore(spec)

    def batch(self, t, table):
        return 2.0 * self._base.batch(t, table)


class TestForwardKL:
    def test_point_mass_slope_minus_one(self):
        rep = check_forward_kl(make_spec(3, 1, q0=point_q0(3, 1, 0)))
        assert rep.passed
        assert rep.observed == pytest.approx(-1.0, abs=1e-6)
        assert rep.fitted_constant == pytest.approx(math.log(2), rel=1e-9)

    def test_all_mask_data_closed_form(self):
        # data already sits at the absorbing point; the gap is the
        # mask-row KL, d * log(1/(1 - e^{-T})) with the default eps
        spec = make_spec(3, 2, q0=point_q0(3, 2, 8))
        for T in (3.0, 6.0):
            got = kl(marginal(spec, T), InitDist.for_horizon(spec, T).dense())
            want = spec.d * math.log(1.0 / (1.0 - math.exp(-T)))
            assert got == pytest.approx(want, rel=1e-10)
        assert check_forward_kl(spec).passed

    def test_dimension_additivity(self):
        base = [0.5, 0.2, 0.3]
        T = 6.0
        kls = []
        for d in (1, 2):
            spec = make_spec(3, d, q0=product_q0([base] * d))
            kls.append(kl(marginal(spec, T), InitDist.for_horizon(spec, T).dense()))
        assert kls[1] == pytest.approx(2 * kls[0], rel=1e-9)


class TestScoreEnvelope:
    def test_point_mass_saturates_upper_bound(self):
        rep = check_score_envelope(make_spec(3, 1, q0=point_q0(3, 1, 0)))
        assert rep.passed
        assert rep.observed == pytest.approx(1.0, abs=1e-10)

    def test_uniform_gamma_one_bounded_by_one(self):
        spec = make_spec(4, 2)
        rep = check_score_envelope(spec)
        assert rep.passed
        # explicit sweep: no score exceeds min(1/t, 1/gamma) with gamma = 1
        for t in (0.01, 0.5, 2.0):
            for a in range(3):
                pair = TransitionPair.make((3, 0), 0, a, spec)
                assert score_analytic(spec, t, pair) <= min(1 / t, 1.0) + 1e-12

    def test_mutation_detected(self):
        spec = make_spec(3, 1, q0=point_q0(3, 1, 0))
        rep = check_score_envelope(spec, score=DoubledScore(spec))
        assert not rep.passed


class TestSumBound:
    def test_point_mass_equality(self):
        rep = check_sum_bound(make_spec(2, 1, q0=point_q0(2, 1, 0)))
        assert rep.passed
        assert rep.observed == pytest.approx(1.0, abs=1e-10)

    def test_no_mask_states_contribute_zero(self):
        # brute check on one spec: states without masks have empty sums
        spec = make_spec(3, 2, q0=uniform_q0(3, 2))
        rep = check_sum_bound(spec)
        assert rep.passed

    def test_mutation_detected(self):
        spec = make_spec(3, 1, q0=point_q0(3, 1, 0))
        rep = check_sum_bound(spec, score=DoubledScore(spec))
        assert not rep.passed


class TestTimeDerivative:
    def test_stationary_closed_form(self):
        # d=1 point mass: s_t = 1/(e^t - 1), derivative -e^t/(e^t - 1)^2
        spec = make_spec(2, 1, q0=point_q0(2, 1, 0))
        pair = TransitionPair.make((1,), 0, 0, spec)
        for t in (3.0, 5.0, 8.0):
            h = 1e-4 * t
            cd = (score_analytic(spec, t + h, pair)
                  - score_analytic(spec, t - h, pair)) / (2 * h)
            want = -math.exp(t) / (math.exp(t) - 1.0) ** 2
            assert cd == pytest.approx(want, rel=1e-6, abs=1e-6)

    def test_fitted_constant_small(self):
        rep = check_time_derivative(make_spec(3, 2))
        assert rep.passed and rep.fitted_constant <= 10

    def test_increment_scales_linearly_in_h(self):
        spec = make_spec(3, 1, q0=product_q0([[0.5, 0.2, 0.3]]))
        pair = TransitionPair.make((2,), 0, 0, spec)
        t = 1.5
        inc = []
        for h in (1e-3, 5e-4):
            inc.append(score_analytic(spec, t, pair) - score_analytic(spec, t - h, pair))
        assert inc[0] / inc[1] == pytest.approx(2.0, rel=5e-3)


class TestEarlyStopTV:
    def test_point_mass_equality(self):
        rep = check_early_stop_tv(make_spec(2, 1, q0=point_q0(2, 1, 0)))
        assert rep.passed
        assert rep.observed == pytest.approx(1.0, abs=1e-12)

    def test_all_mask_identically_zero(self):
        spec = make_spec(3, 1, q0=point_q0(3, 1, 2))
        rep = check_early_stop_tv(spec)
        assert rep.passed
        assert rep.observed == 0.0


class TestLowerBoundDivergence:
    def test_point_mass_floor_is_vocabulary_size(self):
        # s (e^t - 1) = posterior = 1, so the tracked floor is S
        rep = check_lower_bound_divergence(make_spec(3, 1, q0=point_q0(3, 1, 0)))
        assert rep.passed
        assert rep.observed == pytest.approx(3.0, rel=1e-10)

    def test_uniform_non_mask_floor(self):
        S = 4
        rep = check_lower_bound_divergence(
            make_spec(S, 1, q0=maskfree_uniform_q0(S, 1, mask=S - 1))
        )
        assert rep.passed
        assert rep.observed == pytest.approx(S / (S - 1), rel=1e-10)

    def test_requires_mask_free_data(self):
        with pytest.raises(ValueError, match="mask-free"):
            check_lower_bound_divergence(make_spec(3, 1))

    def test_masked_data_score_stays_bounded(self):
        # with mask mass in the data the score itself never diverges
        spec = make_spec(3, 1, q0=product_q0([[0.5, 0.2, 0.3]]))
        gamma = 0.3 / 0.5
        for t in (1e-3, 1e-2, 0.1):
            pair = TransitionPair.make((2,), 0, 0, spec)
            assert score_analytic(spec, t, pair) <= 1.0 / gamma + 1e-9


class TestAggregation:
    def test_default_manifest_all_pass(self):
        reports = run_all_checks()
        assert len(reports) > 50
        assert all(rep.passed for rep in reports)

    def test_reports_deterministic(self):
        assert run_all_checks() == run_all_checks()

    def test_render_and_json(self):
        reports = run_all_checks(default_manifest()[:1])
        text = render_table(reports)
        assert "PASS" in text and "0 failed" in text
        payload = reports_to_json(reports)
        assert "forward-kl-decay" in payload

    def test_empty_manifest_is_noop_success(self):
        assert run_all_checks([]) == []
        assert "0 checks, 0 failed" in render_table([])
