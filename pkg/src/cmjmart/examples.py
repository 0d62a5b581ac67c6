"""Built-in model registry used by the CLI and the test suite."""

from __future__ import annotations

from .errors import UsageError
from .models import BernoulliExp, FixedAtom, OffspringModel, Poisson, make_model


def example_model(name: str, rate: float = 1.0, ancestor: int = 1) -> OffspringModel:
    """Named reference models.

    ``1``       two types; type 1 spawns both types at unit Poisson rates,
                type 2 spawns at most one type-2 child at an Exp(1) time
                with probability 1/2 (reducible; starting from type 2 the
                population dies out).
    ``2``       two types; both types spawn their own type at Poisson rate
                ``rate`` and every type-1 birth instantly adds one type-2
                child (double pole at the Malthusian parameter).
    ``nerman``  the single-type unit-rate Poisson process (the classical
                setting).
    ``full2``   two types, all four entries unit-rate Poisson (primitive).
    ``lattice`` single type, two children exactly one time unit after
                birth (complex characteristic roots on a vertical line).
    """
    key = str(name).lower()
    if key == "1":
        return make_model(
            2,
            {(1, 1): Poisson(1.0), (1, 2): Poisson(1.0),
             (2, 2): BernoulliExp(0.5, 1.0)},
            ancestor)
    if key == "2":
        if rate <= 0:
            raise UsageError("example 2 needs a positive rate")
        return make_model(
            2,
            {(1, 1): Poisson(rate), (1, 2): FixedAtom(0.0, 1),
             (2, 2): Poisson(rate)},
            ancestor)
    if key == "nerman":
        return make_model(1, {(1, 1): Poisson(rate if rate > 0 else 1.0)}, 1)
    if key == "full2":
        return make_model(
            2, {(i, j): Poisson(1.0) for i in (1, 2) for j in (1, 2)}, ancestor)
    if key == "lattice":
        return make_model(1, {(1, 1): FixedAtom(1.0, 2)}, 1)
    raise UsageError(f"unknown example {name!r}; choose 1, 2, nerman, full2 or lattice")
