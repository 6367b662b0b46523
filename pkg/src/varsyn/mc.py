"""Monte-Carlo cross-check of the first-order variance propagation.

Design variables are sampled as jointly Gaussian with means at the
nominals, standard deviations from the link models at the nominals, and
the declared pairwise correlations.  Gaussian inputs are a modelling
choice: the propagation itself only uses means, variances and
correlations, and the Gaussian is the minimal completion of those
moments.

Sampling uses the counter-based Philox generator, so results are fully
reproducible from the seed and independent of any batch partitioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .expr import Expr, Node, evaluate_array
from .synthesis import CorrelationSet, DesignVariable, sigma_of


class McSampleError(RuntimeError):
    """Too many samples hit evaluation domain errors."""


@dataclass(frozen=True)
class McEstimate:
    """Sample statistics of the response over a Monte-Carlo run."""

    n: int
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    seed: int


def simulate(
    e: Union[Expr, Node],
    design_vars: Sequence[DesignVariable],
    correlations: Optional[CorrelationSet] = None,
    n: int = 100_000,
    seed: int = 0,
) -> McEstimate:
    """Estimate the response mean and variance by simulation.

    The run aborts with :class:`McSampleError` if more than 0.1% of the
    samples fail to evaluate (domain errors); otherwise failed samples
    are dropped and ``n`` reports the count actually used.  The
    standard error of the variance comes from the fourth central
    moment.
    """
    if n < 2:
        raise ValueError("need at least 2 samples")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if not design_vars:
        raise ValueError("need at least one design variable")

    names = [v.name for v in design_vars]
    mu = np.array([v.nominal for v in design_vars])
    sig = np.array([sigma_of(v) for v in design_vars])
    corr = correlations if correlations is not None else CorrelationSet()
    factor = corr.factor(names)  # identity when no entries; PSD-checked

    rng = np.random.Generator(np.random.Philox(key=seed))
    z = rng.standard_normal((n, len(names)))
    samples = mu + (z @ factor.T) * sig

    values = evaluate_array(e, {name: samples[:, i] for i, name in enumerate(names)})
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(n, float(values))

    finite = np.isfinite(values)
    failed = int(n - finite.sum())
    if failed > 0.001 * n:
        raise McSampleError(
            f"{failed} of {n} samples failed to evaluate (domain errors)"
        )
    kept = values[finite]
    count = int(kept.size)
    if count < 2:
        raise McSampleError("fewer than 2 evaluable samples")

    mean = float(kept.mean())
    variance = float(kept.var(ddof=1))
    centered = kept - mean
    m4 = float(np.mean(centered ** 4))
    se_variance = math.sqrt(
        max(m4 - variance * variance * (count - 3) / (count - 1), 0.0) / count
    )
    se_mean = math.sqrt(variance / count)
    return McEstimate(
        n=count,
        mean=mean,
        variance=variance,
        se_mean=se_mean,
        se_variance=se_variance,
        seed=seed,
    )
