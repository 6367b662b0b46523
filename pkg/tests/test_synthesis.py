import math
import random

import pytest

from varsyn.expr import parse
from varsyn.synthesis import (
    Correlation,
    CorrelationError,
    CorrelationSet,
    DesignVariable,
    LinkModel,
    rank_contributions,
    sigma_of,
    transmit,
)

VOLUME = parse("pi*(D^2 - B^2)*L/4")

# sample statistics of the bundled bead study (fixed-variance form)
BEAD_FIXED = (
    DesignVariable("D", 1.69, LinkModel.fixed(math.sqrt(0.00125))),
    DesignVariable("B", 0.625, LinkModel.fixed(math.sqrt(0.00254))),
    DesignVariable("L", 1.92, LinkModel.fixed(math.sqrt(0.00536))),
)


class TestLinkModel:
    def test_power_link_constant_cov(self):
        link = LinkModel.power(c=0.02092, p=1)
        v = DesignVariable("D", 2.0, link)
        assert sigma_of(v) == pytest.approx(0.04184, abs=1e-9)
        assert sigma_of(v) ** 2 == pytest.approx(0.00175, abs=1e-5)

    def test_power_link_second_reference_value(self):
        v = DesignVariable("L", 1.30, LinkModel.power(c=0.03813, p=1))
        assert sigma_of(v) ** 2 == pytest.approx(0.00246, abs=1e-5)

    def test_fixed_sigma_ignores_nominal(self):
        link = LinkModel.fixed(0.05)
        assert DesignVariable("x", 3.0, link).link.sigma_at(3.0) == 0.05
        assert link.sigma_at(-100.0) == 0.05

    def test_power_link_zero_exponent_is_constant(self):
        assert LinkModel.power(c=0.7, p=0).sigma_at(123.0) == 0.7

    def test_power_link_requires_positive_nominal_for_fractional_p(self):
        with pytest.raises(ValueError):
            LinkModel.power(c=1.0, p=0.5).sigma_at(-2.0)

    def test_power_link_negative_exponent_at_zero(self):
        with pytest.raises(ValueError):
            LinkModel.power(c=1.0, p=-1.0).sigma_at(0.0)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            LinkModel.fixed(-0.1)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            LinkModel(kind="whatever")


class TestDesignVariable:
    def test_bounds_must_contain_nominal(self):
        with pytest.raises(ValueError):
            DesignVariable("x", 5.0, LinkModel.fixed(1.0), lower=0.0, upper=1.0)

    def test_bounds_order(self):
        with pytest.raises(ValueError):
            DesignVariable("x", 0.5, LinkModel.fixed(1.0), lower=1.0, upper=0.0)

    def test_reserved_names_rejected(self):
        for name in ("pi", "sqrt", "ln", "exp"):
            with pytest.raises(ValueError, match="reserved"):
                DesignVariable(name, 1.0, LinkModel.fixed(0.1))

    def test_invalid_identifier_rejected(self):
        with pytest.raises(ValueError):
            DesignVariable("2x", 1.0, LinkModel.fixed(0.1))


class TestTransmit:
    def test_bead_decomposition(self):
        d = transmit(VOLUME, BEAD_FIXED)
        assert d.per_variable["D"] == pytest.approx(0.0325, abs=5e-4)
        assert d.per_variable["B"] == pytest.approx(0.0090, abs=5e-4)
        assert d.per_variable["L"] == pytest.approx(0.0201, abs=5e-4)
        assert d.total == pytest.approx(0.0616, abs=5e-4)

    def test_identity_transfer_passes_variance_through(self):
        sigma = 0.37
        d = transmit(parse("x"), [DesignVariable("x", 5.0, LinkModel.fixed(sigma))])
        assert d.total == sigma * sigma

    def test_correlated_pair_signed_value(self):
        variables = (
            DesignVariable("D", 2.0, LinkModel.power(c=0.02092, p=1)),
            DesignVariable("B", 0.6, LinkModel.power(c=0.0806, p=1)),
            DesignVariable("L", 1.3, LinkModel.power(c=0.03813, p=1)),
        )
        corr = CorrelationSet.from_pairs([("D", "B", 0.1)])
        d = transmit(VOLUME, variables, corr)
        pair = d.per_pair[("D", "B")]
        assert abs(pair) == pytest.approx(0.00203, abs=2e-5)
        assert pair < 0.0  # the bore slope is negative

    def test_magnitude_convention_flips_sign_only(self):
        variables = (
            DesignVariable("D", 2.0, LinkModel.power(c=0.02092, p=1)),
            DesignVariable("B", 0.6, LinkModel.power(c=0.0806, p=1)),
            DesignVariable("L", 1.3, LinkModel.power(c=0.03813, p=1)),
        )
        corr = CorrelationSet.from_pairs([("D", "B", 0.1)])
        signed = transmit(VOLUME, variables, corr)
        magnitude = transmit(VOLUME, variables, corr, pair_sign="magnitude")
        assert magnitude.per_pair[("D", "B")] == -signed.per_pair[("D", "B")]
        assert magnitude.total > signed.total

    def test_pair_symmetry(self):
        variables = BEAD_FIXED
        one = transmit(VOLUME, variables, CorrelationSet.from_pairs([("D", "B", 0.25)]))
        other = transmit(VOLUME, variables, CorrelationSet.from_pairs([("B", "D", 0.25)]))
        assert one.per_pair[("D", "B")] == other.per_pair[("B", "D")]
        assert one.total == other.total

    def test_total_is_ordered_sum(self):
        corr = CorrelationSet.from_pairs([("D", "B", 0.2), ("D", "L", -0.1)])
        d = transmit(VOLUME, BEAD_FIXED, corr)
        running = 0.0
        for value in d.per_variable.values():
            running += value
        for value in d.per_pair.values():
            running += value
        assert running == d.total

    def test_contributions_are_nonnegative(self):
        d = transmit(VOLUME, BEAD_FIXED)
        assert all(value >= 0.0 for value in d.per_variable.values())

    def test_zero_variance_absorption(self):
        variables = tuple(
            DesignVariable(v.name, v.nominal, LinkModel.fixed(0.0)) for v in BEAD_FIXED
        )
        assert transmit(VOLUME, variables).total == 0.0

    def test_quadratic_scaling_power_of_two_is_exact(self):
        k = 4.0
        scaled = parse(f"{k}*(pi*(D^2 - B^2)*L/4)")
        base = transmit(VOLUME, BEAD_FIXED)
        big = transmit(scaled, BEAD_FIXED)
        for name in ("D", "B", "L"):
            assert big.per_variable[name] == k * k * base.per_variable[name]
        assert big.total == k * k * base.total

    def test_quadratic_scaling_general(self):
        k = 2.7
        scaled = parse(f"{k}*(pi*(D^2 - B^2)*L/4)")
        base = transmit(VOLUME, BEAD_FIXED)
        big = transmit(scaled, BEAD_FIXED)
        assert big.total == pytest.approx(k * k * base.total, rel=1e-12)

    def test_additivity_without_correlations(self):
        total = transmit(VOLUME, BEAD_FIXED).total
        singles = 0.0
        for i, v in enumerate(BEAD_FIXED):
            muted = tuple(
                w if j == i else DesignVariable(w.name, w.nominal, LinkModel.fixed(0.0))
                for j, w in enumerate(BEAD_FIXED)
            )
            singles += transmit(VOLUME, muted).total
        assert singles == pytest.approx(total, rel=1e-15)

    def test_linear_exactness(self):
        e = parse("2*x - 3*y + 0.5*z + 7")
        variables = (
            DesignVariable("x", 1.0, LinkModel.fixed(0.3)),
            DesignVariable("y", 2.0, LinkModel.fixed(0.2)),
            DesignVariable("z", 3.0, LinkModel.fixed(0.5)),
        )
        corr = CorrelationSet.from_pairs([("x", "y", 0.4)])
        expected = (
            (2 * 0.3) ** 2 + (3 * 0.2) ** 2 + (0.5 * 0.5) ** 2
            + 2 * 2 * (-3) * 0.3 * 0.2 * 0.4
        )
        assert transmit(e, variables, corr).total == pytest.approx(expected, rel=1e-14)

    def test_validity_warning_above_limit(self):
        variables = (
            DesignVariable("x", 1.0, LinkModel.fixed(0.25)),
            DesignVariable("y", 1.0, LinkModel.fixed(0.05)),
        )
        d = transmit(parse("x + y"), variables)
        assert d.validity_warnings == ("x",)

    def test_no_warning_at_limit(self):
        variables = (DesignVariable("x", 1.0, LinkModel.fixed(0.2)),)
        assert transmit(parse("x"), variables).validity_warnings == ()

    def test_custom_cov_limit(self):
        variables = (DesignVariable("x", 1.0, LinkModel.fixed(0.15)),)
        assert transmit(parse("x"), variables, cov_limit=0.1).validity_warnings == ("x",)

    def test_undeclared_variable_in_transfer(self):
        with pytest.raises(ValueError, match="undeclared"):
            transmit(parse("x + q"), (DesignVariable("x", 1.0, LinkModel.fixed(0.1)),))

    def test_unused_declared_variable_contributes_zero(self):
        variables = (
            DesignVariable("x", 1.0, LinkModel.fixed(0.1)),
            DesignVariable("spare", 1.0, LinkModel.fixed(9.0)),
        )
        d = transmit(parse("x"), variables)
        assert d.per_variable["spare"] == 0.0


class TestCorrelationSet:
    def test_duplicate_pair_rejected(self):
        with pytest.raises(CorrelationError, match="duplicate"):
            CorrelationSet.from_pairs([("a", "b", 0.1), ("b", "a", 0.2)])

    def test_rho_out_of_range(self):
        with pytest.raises(CorrelationError):
            Correlation("a", "b", 1.5)

    def test_self_pair_rejected(self):
        with pytest.raises(CorrelationError):
            Correlation("a", "a", 0.1)

    def test_undeclared_name(self):
        corr = CorrelationSet.from_pairs([("a", "Q", 0.1)])
        with pytest.raises(CorrelationError, match="'Q'"):
            corr.validate_names(["a", "b"])

    def test_non_psd_matrix_rejected(self):
        corr = CorrelationSet.from_pairs(
            [("a", "b", 0.9), ("b", "c", 0.9), ("a", "c", -0.9)]
        )
        with pytest.raises(CorrelationError, match="positive semi-definite"):
            corr.factor(["a", "b", "c"])

    def test_perfect_correlation_is_allowed(self):
        corr = CorrelationSet.from_pairs([("a", "b", 1.0)])
        factor = corr.factor(["a", "b"])
        import numpy as np

        assert np.allclose(factor @ factor.T, corr.matrix(["a", "b"]), atol=1e-12)

    def test_with_rho_replaces_pair(self):
        corr = CorrelationSet.from_pairs([("a", "b", 0.1), ("a", "c", 0.3)])
        updated = corr.with_rho("b", "a", 0.5)
        assert updated.rho("a", "b") == 0.5
        assert updated.rho("a", "c") == 0.3


class TestRankContributions:
    def test_bead_ranking(self):
        ranking = rank_contributions(transmit(VOLUME, BEAD_FIXED))
        assert [r.source for r in ranking] == ["D", "L", "B"]
        assert ranking[0].share == pytest.approx(0.527, abs=1e-3)
        assert ranking[1].share == pytest.approx(0.326, abs=1e-3)
        assert ranking[2].share == pytest.approx(0.146, abs=1e-3)

    def test_shares_sum_to_one(self):
        corr = CorrelationSet.from_pairs([("D", "B", 0.2)])
        ranking = rank_contributions(transmit(VOLUME, BEAD_FIXED, corr))
        assert sum(r.share for r in ranking) == pytest.approx(1.0, abs=1e-12)

    def test_single_variable_share(self):
        d = transmit(parse("x"), (DesignVariable("x", 1.0, LinkModel.fixed(0.5)),))
        ranking = rank_contributions(d)
        assert len(ranking) == 1 and ranking[0].share == 1.0

    def test_tie_breaks_lexicographically(self):
        variables = (
            DesignVariable("b", 1.0, LinkModel.fixed(0.5)),
            DesignVariable("a", 1.0, LinkModel.fixed(0.5)),
        )
        ranking = rank_contributions(transmit(parse("a + b"), variables))
        assert [r.source for r in ranking] == ["a", "b"]

    def test_zero_total_is_an_error(self):
        d = transmit(parse("x"), (DesignVariable("x", 1.0, LinkModel.fixed(0.0)),))
        with pytest.raises(ValueError, match="ranking undefined"):
            rank_contributions(d)


class TestRandomisedInvariants:
    """Scaling/absorption/summation invariants on random 3-6 variable studies."""

    def _random_study(self, rng):
        count = rng.randint(3, 6)
        names = [f"v{i}" for i in range(count)]
        terms = []
        for i, name in enumerate(names):
            coefficient = round(rng.uniform(0.2, 2.0), 3)
            partner = names[(i + 1) % count]
            terms.append(f"{coefficient}*{name}")
            if rng.random() < 0.5:
                terms.append(f"{round(rng.uniform(0.05, 0.4), 3)}*{name}*{partner}")
            if rng.random() < 0.3:
                terms.append(f"{round(rng.uniform(0.05, 0.3), 3)}*{name}^2")
        text = " + ".join(terms)
        variables = tuple(
            DesignVariable(name, rng.uniform(0.5, 3.0),
                           LinkModel.fixed(rng.uniform(0.01, 0.2)))
            for name in names
        )
        return parse(text), variables

    def test_invariants_hold_across_random_studies(self):
        rng = random.Random(20240811)
        for _ in range(20):
            e, variables = self._random_study(rng)

            d = transmit(e, variables)
            assert all(value >= 0.0 for value in d.per_variable.values())
            running = sum(d.per_variable.values()) + sum(d.per_pair.values())
            assert running == pytest.approx(d.total, rel=1e-15, abs=1e-300)

            muted = tuple(
                DesignVariable(v.name, v.nominal, LinkModel.fixed(0.0))
                for v in variables
            )
            assert transmit(e, muted).total == 0.0

            k = 2.0  # power of two: scaling is exact in floating point
            scaled = parse(f"{k}*({ str(e) })")
            big = transmit(scaled, variables)
            assert big.total == k * k * d.total
