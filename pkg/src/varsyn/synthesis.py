"""First-order variance transmission through a transfer function.

Each design variable contributes the squared local slope of the
transfer function times its variance; a correlated pair adds the cross
term ``2 * g_a * g_b * sigma_a * sigma_b * rho``.  The approximation is
first-order: a warning is recorded for any variable whose coefficient
of variation exceeds the configured limit (default 20%), beyond which
the linearisation may be inaccurate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .autodiff import partials
from .expr import Expr, Node, RESERVED_NAMES
from .expr import variables as expr_variables

FIXED_SIGMA = "fixed-sigma"
POWER_LINK = "power-link"

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")


class CorrelationError(ValueError):
    """Invalid correlation set (bad entries or non-PSD matrix)."""


@dataclass(frozen=True)
class LinkModel:
    """How a variable's standard deviation follows its nominal.

    ``fixed-sigma`` keeps a constant standard deviation; ``power-link``
    scales it as ``c * nominal**p`` (p=1 means constant coefficient of
    variation, p=0 degenerates to a fixed sigma of c).
    """

    kind: str
    sigma: float = 0.0  # fixed-sigma only
    c: float = 0.0      # power-link coefficient
    p: float = 0.0      # power-link exponent

    def __post_init__(self):
        if self.kind not in (FIXED_SIGMA, POWER_LINK):
            raise ValueError(
                f"link kind must be {FIXED_SIGMA!r} or {POWER_LINK!r}, got {self.kind!r}"
            )
        if self.kind == FIXED_SIGMA and self.sigma < 0.0:
            raise ValueError("fixed sigma must be non-negative")
        if self.kind == POWER_LINK and self.c < 0.0:
            raise ValueError("power-link coefficient must be non-negative")

    @classmethod
    def fixed(cls, sigma: float) -> "LinkModel":
        return cls(kind=FIXED_SIGMA, sigma=float(sigma))

    @classmethod
    def power(cls, c: float, p: float = 1.0) -> "LinkModel":
        return cls(kind=POWER_LINK, c=float(c), p=float(p))

    def sigma_at(self, nominal: float) -> float:
        """Standard deviation implied by this link at the given nominal."""
        if self.kind == FIXED_SIGMA:
            return self.sigma
        if self.p == 0.0:
            return self.c
        if nominal == 0.0:
            if self.p > 0.0:
                return 0.0
            raise ValueError("power-link with negative exponent undefined at zero nominal")
        if nominal < 0.0:
            if not float(self.p).is_integer():
                raise ValueError(
                    "power-link with non-integer exponent requires a positive nominal"
                )
            sigma = self.c * nominal ** self.p
            if sigma < 0.0:
                raise ValueError("power-link yields a negative standard deviation")
            return sigma
        return self.c * nominal ** self.p


@dataclass(frozen=True)
class DesignVariable:
    """A named design variable: nominal, variability link, optional box bounds."""

    name: str
    nominal: float
    link: LinkModel
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ValueError(f"invalid variable name {self.name!r}")
        if self.name in RESERVED_NAMES:
            raise ValueError(f"{self.name!r} is reserved and cannot name a variable")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValueError(f"{self.name}: lower bound exceeds upper bound")
        if self.lower is not None and self.nominal < self.lower:
            raise ValueError(f"{self.name}: nominal {self.nominal} below lower bound {self.lower}")
        if self.upper is not None and self.nominal > self.upper:
            raise ValueError(f"{self.name}: nominal {self.nominal} above upper bound {self.upper}")


def sigma_of(v: DesignVariable) -> float:
    """Standard deviation of a design variable at its current nominal."""
    return v.link.sigma_at(v.nominal)


@dataclass(frozen=True)
class Correlation:
    a: str
    b: str
    rho: float

    def __post_init__(self):
        if self.a == self.b:
            raise CorrelationError(f"correlation pairs a variable with itself: {self.a!r}")
        if not -1.0 <= self.rho <= 1.0:
            raise CorrelationError(
                f"correlation for ({self.a}, {self.b}) must lie in [-1, 1], got {self.rho}"
            )


@dataclass(frozen=True)
class CorrelationSet:
    """Pairwise correlations between design variables."""

    entries: tuple[Correlation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for entry in self.entries:
            key = frozenset((entry.a, entry.b))
            if key in seen:
                raise CorrelationError(
                    f"duplicate correlation pair ({entry.a}, {entry.b})"
                )
            seen.add(key)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str, float]]) -> "CorrelationSet":
        return cls(tuple(Correlation(a, b, float(r)) for a, b, r in pairs))

    def validate_names(self, declared: Sequence[str]) -> None:
        known = set(declared)
        for entry in self.entries:
            for name in (entry.a, entry.b):
                if name not in known:
                    raise CorrelationError(
                        f"correlation references undeclared variable {name!r}"
                    )

    def rho(self, a: str, b: str) -> float:
        key = frozenset((a, b))
        for entry in self.entries:
            if frozenset((entry.a, entry.b)) == key:
                return entry.rho
        return 0.0

    def with_rho(self, a: str, b: str, rho: float) -> "CorrelationSet":
        """Copy with the correlation of one pair replaced (or appended)."""
        key = frozenset((a, b))
        kept = tuple(e for e in self.entries if frozenset((e.a, e.b)) != key)
        return CorrelationSet(kept + (Correlation(a, b, float(rho)),))

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Correlation matrix over ``names`` (1s on the diagonal)."""
        self.validate_names(names)
        index = {name: i for i, name in enumerate(names)}
        m = np.eye(len(names))
        for entry in self.entries:
            i, j = index[entry.a], index[entry.b]
            m[i, j] = m[j, i] = entry.rho
        return m

    def factor(self, names: Sequence[str]) -> np.ndarray:
        """Symmetric factor F with F @ F.T equal to the correlation matrix.

        Raises :class:`CorrelationError` if the matrix is not positive
        semi-definite (eigenvalues below -1e-12 after scaling).
        """
        return psd_factor(self.matrix(names))


EMPTY_CORRELATIONS = CorrelationSet()


def psd_factor(matrix: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric factorization with tolerance for rounding-level negatives."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    eigenvalues, vectors = np.linalg.eigh(matrix)
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))
    if eigenvalues.min() < -tol * scale:
        raise CorrelationError(
            "correlation matrix is not positive semi-definite "
            f"(min eigenvalue {eigenvalues.min():.3e})"
        )
    return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


@dataclass(frozen=True)
class VarianceDecomposition:
    """Per-source contributions to the transmitted response variance.

    ``total`` is the ordered sum of ``per_variable`` then ``per_pair``
    entries, exactly as constructed.
    """

    per_variable: dict[str, float]
    per_pair: dict[tuple[str, str], float]
    total: float
    validity_warnings: tuple[str, ...] = ()


def transmit(
    e: Union[Expr, Node],
    design_vars: Sequence[DesignVariable],
    correlations: Optional[CorrelationSet] = None,
    cov_limit: float = 0.2,
    pair_sign: str = "signed",
) -> VarianceDecomposition:
    """Propagate variable variances and correlations to the response.

    Derivatives are taken at the nominals; each variable's sigma comes
    from its link model at the nominal.  ``pair_sign`` selects whether
    cross terms keep their mathematical sign (``"signed"``, the correct
    statistical form) or enter as magnitudes (``"magnitude"``).
    """
    names = [v.name for v in design_vars]
    if len(set(names)) != len(names):
        raise ValueError("duplicate design variable names")
    point = {v.name: v.nominal for v in design_vars}
    sigmas = {v.name: sigma_of(v) for v in design_vars}
    return transmit_at(
        e,
        point,
        sigmas,
        correlations=correlations,
        cov_limit=cov_limit,
        pair_sign=pair_sign,
    )


def transmit_at(
    e: Union[Expr, Node],
    point: Mapping[str, float],
    sigmas: Mapping[str, float],
    correlations: Optional[CorrelationSet] = None,
    cov_limit: float = 0.2,
    pair_sign: str = "signed",
) -> VarianceDecomposition:
    """Variance decomposition with explicit standard deviations at a point.

    Lower-level sibling of :func:`transmit` for callers that evaluate
    link models themselves (candidate points, contour cells).
    """
    if pair_sign not in ("signed", "magnitude"):
        raise ValueError(f"pair_sign must be 'signed' or 'magnitude', got {pair_sign!r}")
    names = list(point)
    if len(set(names)) != len(names):
        raise ValueError("duplicate variable names")
    missing = set(expr_variables(e)) - set(names)
    if missing:
        raise ValueError(
            f"transfer function references undeclared variable(s): {sorted(missing)}"
        )
    corr = correlations if correlations is not None else EMPTY_CORRELATIONS
    if corr.entries:
        corr.factor(names)  # validates names and positive semi-definiteness

    grad = partials(e, point).partials
    per_variable: dict[str, float] = {}
    total = 0.0
    for name in names:
        g = grad.get(name, 0.0)
        s = float(sigmas[name])
        contribution = (g * g) * (s * s)
        per_variable[name] = contribution
        total += contribution

    per_pair: dict[tuple[str, str], float] = {}
    for entry in corr.entries:
        # canonical operand order keeps the value bit-identical under
        # swapping of the pair
        first, second = sorted((entry.a, entry.b))
        term = (
            2.0
            * grad.get(first, 0.0)
            * grad.get(second, 0.0)
            * float(sigmas[first])
            * float(sigmas[second])
            * entry.rho
        )
        if pair_sign == "magnitude":
            term = abs(term)
        per_pair[(entry.a, entry.b)] = term
        total += term

    warnings = []
    for name in names:
        mu = float(point[name])
        s = float(sigmas[name])
        if mu == 0.0:
            if s > 0.0:
                warnings.append(name)
        elif s / abs(mu) > cov_limit:
            warnings.append(name)

    return VarianceDecomposition(
        per_variable=per_variable,
        per_pair=per_pair,
        total=total,
        validity_warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class RankedContribution:
    source: str
    contribution: float
    share: float


def rank_contributions(d: VarianceDecomposition) -> list[RankedContribution]:
    """Contributions sorted by magnitude, largest first.

    Pair entries are labelled ``"a:b"``.  Ties break lexicographically
    by source label.  Raises ``ValueError`` when the total is not
    positive (ranking is undefined with all variances zero).
    """
    if d.total <= 0.0:
        raise ValueError("ranking undefined: total transmitted variance is not positive")
    entries: list[tuple[str, float]] = list(d.per_variable.items())
    entries.extend((f"{a}:{b}", value) for (a, b), value in d.per_pair.items())
    entries.sort(key=lambda item: (-abs(item[1]), item[0]))
    return [
        RankedContribution(source=source, contribution=value, share=value / d.total)
        for source, value in entries
    ]
