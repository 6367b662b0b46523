import math
import random
from fractions import Fraction

import pytest

from varsyn.expr import evaluate, parse
from varsyn.pi_groups import (
    DimensionError,
    DimensionedVariable,
    PiGroup,
    infer_dimensions,
    reduce,
)

L = {"length": 1}
L3 = {"length": 3}


def bead_variables():
    return [
        DimensionedVariable("V", L3),
        DimensionedVariable("D", L),
        DimensionedVariable("B", L),
        DimensionedVariable("L", L),
    ]


class TestReduce:
    def test_bead_reduction_with_chosen_repeating(self):
        groups = reduce(bead_variables(), repeating=["B"])
        assert [g.powers for g in groups] == [
            {"V": Fraction(1), "B": Fraction(-3)},
            {"D": Fraction(1), "B": Fraction(-1)},
            {"L": Fraction(1), "B": Fraction(-1)},
        ]

    def test_bead_reduction_auto_repeating_is_lexicographic(self):
        # B is the lexicographically first independent column
        assert reduce(bead_variables()) == reduce(bead_variables(), repeating=["B"])

    def test_group_count_equals_vars_minus_rank(self):
        groups = reduce(bead_variables(), repeating=["B"])
        assert len(groups) == 4 - 1

    def test_single_dimensionless_variable(self):
        groups = reduce([DimensionedVariable("x", {})])
        assert groups == [PiGroup({"x": Fraction(1)})]

    def test_force_mass_acceleration(self):
        variables = [
            DimensionedVariable("F", {"mass": 1, "length": 1, "time": -2}),
            DimensionedVariable("m", {"mass": 1}),
            DimensionedVariable("a", {"length": 1, "time": -2}),
        ]
        groups = reduce(variables, repeating=["m", "a"])
        assert groups == [
            PiGroup({"F": Fraction(1), "m": Fraction(-1), "a": Fraction(-1)})
        ]

    def test_groups_are_exactly_dimensionless(self):
        variables = [
            DimensionedVariable("q", {"mass": Fraction(1, 2), "time": -1}),
            DimensionedVariable("r", {"mass": 1, "length": 2}),
            DimensionedVariable("s", {"length": 1, "time": 1}),
            DimensionedVariable("t", {"mass": 1, "length": 1, "time": -1}),
        ]
        by_name = {v.name: v for v in variables}
        for group in reduce(variables):
            for dim in ("mass", "length", "time"):
                total = sum(
                    (power * by_name[name].exponent(dim)
                     for name, power in group.powers.items()),
                    Fraction(0),
                )
                assert total == 0

    def test_fractional_exponents_stay_exact(self):
        variables = [
            DimensionedVariable("u", {"length": Fraction(1, 2)}),
            DimensionedVariable("w", {"length": 2}),
        ]
        groups = reduce(variables, repeating=["w"])
        assert groups[0].powers == {"u": Fraction(1), "w": Fraction(-1, 4)}

    def test_empty_input_rejected(self):
        with pytest.raises(DimensionError):
            reduce([])

    def test_wrong_repeating_size(self):
        with pytest.raises(DimensionError, match="exactly 1"):
            reduce(bead_variables(), repeating=["B", "D"])

    def test_dependent_repeating_set(self):
        variables = [
            DimensionedVariable("a", {"length": 1, "time": -1}),
            DimensionedVariable("b", {"length": 2, "time": -2}),
            DimensionedVariable("c", {"length": 1}),
        ]
        with pytest.raises(DimensionError, match="not .*independent"):
            reduce(variables, repeating=["a", "b"])

    def test_unknown_repeating_name(self):
        with pytest.raises(DimensionError, match="unknown"):
            reduce(bead_variables(), repeating=["Q"])

    def test_duplicate_variable_names(self):
        with pytest.raises(DimensionError, match="duplicate"):
            reduce([DimensionedVariable("x", L), DimensionedVariable("x", L)])

    def test_random_exponent_matrices_obey_the_count_rule(self):
        rng = random.Random(2718)
        dims = ("mass", "length", "time")
        for _ in range(20):
            count = rng.randint(2, 6)
            variables = []
            for i in range(count):
                exponents = {
                    dim: rng.choice([-2, -1, 0, 0, 1, 2]) for dim in dims
                }
                variables.append(DimensionedVariable(f"x{i}", exponents))
            groups = reduce(variables)
            columns = [
                [v.exponent(dim) for dim in dims] for v in variables
            ]
            from varsyn.pi_groups import _column_rank

            assert len(groups) == count - _column_rank(columns)


class TestBeadIdentity:
    def test_reduced_relation_holds_numerically(self):
        """pi0 == (pi/4) * (pi1^2 - 1) * pi2 across the design space."""
        volume = parse("pi*(D^2 - B^2)*L/4")
        groups = reduce(bead_variables(), repeating=["B"])
        pi0, pi1, pi2 = groups
        rng = random.Random(5150)
        for _ in range(100):
            point = {
                "D": rng.uniform(0.5, 5.0),
                "B": rng.uniform(0.1, 5.0),
                "L": rng.uniform(0.1, 5.0),
            }
            values = dict(point, V=evaluate(volume, point))
            lhs = pi0.value(values)
            rhs = (math.pi / 4.0) * (pi1.value(values) ** 2 - 1.0) * pi2.value(values)
            assert lhs == pytest.approx(rhs, rel=1e-12)


class TestInferDimensions:
    def test_bead_volume_dimension(self):
        dims = infer_dimensions(parse("pi*(D^2 - B^2)*L/4"),
                                {"D": L, "B": L, "L": L})
        assert dims == {"length": Fraction(3)}

    def test_sqrt_halves_exponents(self):
        dims = infer_dimensions(parse("sqrt(x)"), {"x": L3})
        assert dims == {"length": Fraction(3, 2)}

    def test_mismatched_addition_rejected(self):
        with pytest.raises(DimensionError, match="different dimensions"):
            infer_dimensions(parse("x + y"), {"x": L, "y": L3})

    def test_log_requires_dimensionless(self):
        with pytest.raises(DimensionError, match="dimensionless"):
            infer_dimensions(parse("ln(x)"), {"x": L})

    def test_ratio_cancels(self):
        dims = infer_dimensions(parse("x/y"), {"x": L, "y": L})
        assert dims == {}

    def test_undeclared_variable(self):
        with pytest.raises(DimensionError, match="no dimensions"):
            infer_dimensions(parse("x"), {})


class TestPiGroupText:
    def test_rendering(self):
        group = PiGroup({"V": Fraction(1), "B": Fraction(-3)})
        assert group.as_text() == "V*B^-3"

    def test_fractional_power_is_parenthesised(self):
        group = PiGroup({"u": Fraction(1), "w": Fraction(-1, 4)})
        assert group.as_text() == "u*w^(-1/4)"
