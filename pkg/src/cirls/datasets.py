"""Loaders for the case-study datasets."""
from __future__ import annotations

import csv
import os
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InputError, MissingDataset

GDP_ENV = "CIRLS_GDP_DATA"
# column prefixes (case-insensitive) of the six GDP components, in order
GDP_COMPONENTS = (
    ("agriculture", ("agri",)),
    ("manufacture", ("manu", "mining")),
    ("construction", ("constr",)),
    ("wholesale", ("whole", "trade")),
    ("transport", ("trans",)),
    ("other", ("other",)),
)


def load_temperature() -> dict:
    """Annual global temperature anomaly, 1850-2015."""
    text = resources.files("cirls").joinpath("data/temperature_anomaly.csv").read_text(encoding="utf-8")
    rows = list(csv.reader(text.splitlines()))
    body = rows[1:]
    return {
        "year": np.array([int(r[0]) for r in body]),
        "anomaly": np.array([float(r[1]) for r in body]),
    }


def _find(header, prefixes, exclude=()):
    low = [h.strip().lower() for h in header]
    for pre in prefixes:
        hits = [i for i, h in enumerate(low) if h.startswith(pre) and i not in exclude]
        if hits:
            return hits[0]
    return None


def load_gdp(path: str | os.PathLike | None = None) -> dict:
    """GDP composition and life expectancy of the EU-27 member states.

    The data are not bundled. ``path`` (or the ``CIRLS_GDP_DATA`` environment
    variable) must point to a CSV export of ``lifeExpGdp`` from the R
    package robCompositions. Components are closed to proportions before
    taking logs.
    """
    path = path or os.environ.get(GDP_ENV)
    if not path:
        raise MissingDataset(
            "the GDP composition dataset is not bundled; export it from R with "
            "data(lifeExpGdp, package='robCompositions'); write.csv(lifeExpGdp, 'lifeExpGdp.csv', row.names=FALSE) "
            f"and set {GDP_ENV} or pass --data"
        )
    path = Path(path)
    if not path.is_file():
        raise MissingDataset(f"GDP composition file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols, used = [], set()
    for name, prefixes in GDP_COMPONENTS:
        j = _find(header, prefixes, used)
        if j is None:
            raise InputError(f"{path}: no column for GDP component {name!r} (looked for {prefixes})")
        cols.append(j)
        used.add(j)
    j_women = _find(header, ("lifeexpwomen", "women", "female"))
    j_men = _find(header, ("lifeexpmen", "men", "male"), {j_women})
    j_gdp = _find(header, ("gdp",), used)
    for label, j in (("men", j_men), ("women", j_women), ("gdp", j_gdp)):
        if j is None:
            raise InputError(f"{path}: no column found for {label!r}")

    def column(j):
        out = []
        for r, row in enumerate(body, start=2):
            try:
                out.append(float(row[j]))
            except (ValueError, IndexError):
                raise InputError(f"{path}: row {r}, column {header[j]!r}: not a number") from None
        return np.array(out)

    Z = np.column_stack([column(j) for j in cols])
    if np.any(Z <= 0):
        raise InputError(f"{path}: GDP components must be positive")
    Z = Z / Z.sum(axis=1, keepdims=True)
    return {
        "components": tuple(name for name, _ in GDP_COMPONENTS),
        "log_share": np.log(Z),
        "gdp": column(j_gdp),
        "life_men": column(j_men),
        "life_women": column(j_women),
    }
