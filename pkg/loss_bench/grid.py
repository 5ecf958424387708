import dataclasses
import json
import pathlib
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DomainError

SCHEMA_VERSION = "1.0"
CSV_FLOAT_FORMAT = "%.17g"


def cell_centers(n_points: int) -> np.ndarray:
    """Cell centred abscissae of n_points equal cells on [0, 1]."""
    if n_points < 1:
        raise DomainError(f"grid needs at least one point, got {n_points}")
    return (np.arange(n_points) + 0.5) / n_points


@dataclasses.dataclass
class DensityGrid:
    """
    Loss density sampled on a rectangular grid. One axis gives a curve, two
    axes a surface with values indexed [i, j] for (axes[0][i], axes[1][j]).
    """

    axes: List[np.ndarray]
    values: np.ndarray
    axis_names: Sequence[str] = ("l1", "l2")
    metadata: Dict = dataclasses.field(default_factory=dict)
    flags: List[str] = dataclasses.field(default_factory=list)
    quality: Optional[np.ndarray] = None

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise DomainError(
                f"values of shape {self.values.shape} do not match axes "
                f"{[len(a) for a in self.axes]}"
            )
        for a in self.axes:
            if len(a) > 1 and not np.all(np.diff(a) > 0):
                raise DomainError("grid axes must be strictly increasing")
        self.axis_names = tuple(self.axis_names[: len(self.axes)])

    @property
    def cell_area(self) -> float:
        return float(np.prod([a[1] - a[0] if len(a) > 1 else 1.0 for a in self.axes]))

    def mass(self, mask: Optional[np.ndarray] = None) -> float:
        """Midpoint rule mass of the grid, optionally restricted to mask."""
        values = self.values if mask is None else np.where(mask, self.values, 0.0)
        return float(values.sum() * self.cell_area)

    def mesh(self) -> List[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def to_frame(self) -> pd.DataFrame:
        columns = {name: m.ravel() for name, m in zip(self.axis_names, self.mesh())}
        columns["density"] = self.values.ravel()
        if self.quality is not None:
            columns["quality"] = np.asarray(self.quality).ravel()
        return pd.DataFrame(columns)

    def to_csv(self, path) -> pathlib.Path:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(
            path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"
        )
        return path

    def envelope(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "density_grid",
            "axes": {n: a.tolist() for n, a in zip(self.axis_names, self.axes)},
            "flags": list(self.flags),
            "metadata": self.metadata,
        }

    def to_json(self, path) -> pathlib.Path:
        return write_envelope(path, self.envelope())


def write_envelope(path, envelope: dict) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(envelope, indent=2, sort_keys=True) + "\n")
    return path


def write_table(path, frame: pd.DataFrame) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path
