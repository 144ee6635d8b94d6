"""Command distribution maps: coordinate -> command likelihood grids."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import BOX_HALF_XY, BOX_Z_MAX, COMMAND_TYPES, SurveillanceScene
from .matcher import argmax_first

FILTER_KINDS = ("gaussian", "binary", "maximum", "uniform")
GRID_XY = 64
GRID_Z = 16
_CHUNK = 64


class CdmConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    kind: str = "gaussian"
    sigma_xy: float = 8000.0
    sigma_z: float = 800.0
    radius_xy: float = 10000.0
    radius_z: float = 1000.0

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise CdmConfigError(f"unknown filter kind {self.kind!r}")
        if min(self.sigma_xy, self.sigma_z, self.radius_xy, self.radius_z) <= 0:
            raise CdmConfigError("filter widths must be positive")

    @property
    def kernel_widths(self) -> tuple[float, float]:
        if self.kind in ("gaussian", "maximum"):
            return self.sigma_xy, self.sigma_z
        return self.radius_xy, self.radius_z


def grid_shape(dims: str) -> tuple[int, ...]:
    if dims == "2d":
        return (GRID_XY, GRID_XY)
    if dims == "3d":
        return (GRID_XY, GRID_XY, GRID_Z)
    raise CdmConfigError(f"dims must be '2d' or '3d', got {dims!r}")


def cell_sizes(dims: str) -> tuple[float, ...]:
    shape = grid_shape(dims)
    sizes = (2 * BOX_HALF_XY / GRID_XY, 2 * BOX_HALF_XY / GRID_XY, BOX_Z_MAX / GRID_Z)
    return sizes[: len(shape)]


def cell_centers(dims: str) -> list[np.ndarray]:
    lows = (-BOX_HALF_XY, -BOX_HALF_XY, 0.0)
    return [lo + (np.arange(n) + 0.5) * e for lo, n, e in zip(lows, grid_shape(dims), cell_sizes(dims))]


def nearest_cells(coords: np.ndarray, dims: str) -> tuple[np.ndarray, ...]:
    """Per-axis index arrays of the cells containing each row of ``coords``.

    Points outside the box clamp to the border cell.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    lows = (-BOX_HALF_XY, -BOX_HALF_XY, 0.0)
    return tuple(
        np.clip(np.floor((coords[:, a] - lo) / e), 0, n - 1).astype(int)
        for a, (lo, e, n) in enumerate(zip(lows, cell_sizes(dims), grid_shape(dims)))
    )


def nearest_cell(xyz: Sequence[float], dims: str) -> tuple[int, ...]:
    return tuple(int(i[0]) for i in nearest_cells(np.asarray(xyz)[None, :3], dims))


@dataclass
class DistributionMap:
    command: str
    dims: str
    values: np.ndarray
    filter: FilterConfig
    sample_count: int

    @property
    def cell_sizes(self) -> tuple[float, ...]:
        return cell_sizes(self.dims)

    def at(self, xyz: Sequence[float]) -> float:
        return float(self.values[nearest_cell(xyz, self.dims)])

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "dims": self.dims,
            "shape": list(self.values.shape),
            "cell_sizes": list(self.cell_sizes),
            "filter": asdict(self.filter),
            "sample_count": self.sample_count,
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionMap":
        shape = grid_shape(d["dims"])
        values = np.asarray(d["values"], dtype=float)
        if values.size != int(np.prod(shape)):
            raise CdmConfigError(f"map {d['command']}: value count does not match {d['dims']} grid")
        return cls(d["command"], d["dims"], values.reshape(shape), FilterConfig(**d["filter"]),
                   int(d["sample_count"]))


def _scaled_offsets(points: np.ndarray, dims: str, widths: tuple[float, float]) -> list[np.ndarray]:
    """Per axis, (n_points, n_cells) offsets divided by the kernel width."""
    scale = (widths[0], widths[0], widths[1])
    return [
        (centers[None, :] - points[:, a : a + 1]) / scale[a]
        for a, centers in enumerate(cell_centers(dims))
    ]


def _outer(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Per-point outer sum over axes: (n, nx, ny[, nz])."""
    out = parts[0][:, :, None] + parts[1][:, None, :]
    if len(parts) == 3:
        out = out[..., None] + parts[2][:, None, None, :]
    return out


def build_map(
    pairs: Iterable[tuple[Sequence[float], str]] | Iterable[Sequence[float]],
    filter: FilterConfig = FilterConfig(),
    dims: str = "3d",
    command: str = "",
) -> DistributionMap:
    """Filter coordinate samples onto the grid and scale the peak to 1.

    ``pairs`` holds either ``(xyz, command)`` tuples or bare coordinates.
    """
    shape = grid_shape(dims)
    pts = []
    for p in pairs:
        if len(p) == 2 and isinstance(p[1], str):
            p = p[0]
        pts.append(np.asarray(p, dtype=float)[:3])
    points = np.array(pts, dtype=float).reshape(-1, 3)
    values = np.zeros(shape)
    offsets = _scaled_offsets(points, dims, filter.kernel_widths)
    sq = [o * o for o in offsets]
    if filter.kind == "gaussian" and len(points):
        k = [np.exp(-0.5 * s) for s in sq]
        spec = "ia,ib->ab" if dims == "2d" else "ia,ib,ic->abc"
        values = np.einsum(spec, *k)
    else:
        for start in range(0, len(points), _CHUNK):
            d2 = _outer([s[start : start + _CHUNK] for s in sq])
            if filter.kind == "maximum":
                values = np.maximum(values, np.exp(-0.5 * d2.min(axis=0)))
            elif filter.kind == "binary":
                values = np.maximum(values, (d2 <= 1.0).any(axis=0).astype(float))
            else:
                values = values + (d2 <= 1.0).sum(axis=0)
    peak = values.max() if values.size else 0.0
    if peak > 0:
        values = values / peak
    return DistributionMap(command, dims, values, filter, len(points))


@dataclass
class Cdm:
    maps: Mapping[str, DistributionMap]
    dims: str

    def __post_init__(self):
        missing = set(COMMAND_TYPES) - set(self.maps)
        if missing:
            raise CdmConfigError(f"missing maps for {sorted(missing)}")
        kinds = {m.filter.kind for m in self.maps.values()}
        if {m.dims for m in self.maps.values()} != {self.dims} or len(kinds) != 1:
            raise CdmConfigError("all maps must share dims and filter kind")

    @property
    def filter(self) -> FilterConfig:
        return self.maps[COMMAND_TYPES[0]].filter

    def to_dict(self) -> dict:
        return {
            "kind": "cdm",
            "format_version": 1,
            "dims": self.dims,
            "maps": [self.maps[c].to_dict() for c in COMMAND_TYPES],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cdm":
        if d.get("kind") != "cdm":
            raise CdmConfigError("not a CDM file")
        maps = {m["command"]: DistributionMap.from_dict(m) for m in d["maps"]}
        return cls(maps, d["dims"])


def build_cdm(
    pairs: Iterable[tuple[Sequence[float], str]],
    filter: FilterConfig = FilterConfig(),
    dims: str = "3d",
) -> Cdm:
    """One map per command type from ``(xyz, command)`` pairs."""
    grid_shape(dims)
    by_cmd: dict[str, list] = {c: [] for c in COMMAND_TYPES}
    for xyz, cmd in pairs:
        if cmd not in by_cmd:
            raise CdmConfigError(f"unknown command type {cmd!r}")
        by_cmd[cmd].append(xyz)
    return Cdm({c: build_map(p, filter, dims, c) for c, p in by_cmd.items()}, dims)


def query_dis(cdm: Cdm, xyz: Sequence[float], predicted: Iterable[str] = ()) -> float:
    """Mean map value over ``predicted`` commands (select), or over all six (naive)."""
    chosen = [c for c in COMMAND_TYPES if c in set(predicted)] or list(COMMAND_TYPES)
    cell = nearest_cell(xyz, cdm.dims)
    return float(np.mean([cdm.maps[c].values[cell] for c in chosen]))


def dis_many(cdm: Cdm, coords: np.ndarray, predicted: Iterable[str] = ()) -> np.ndarray:
    """Vectorised :func:`query_dis` over the rows of ``coords``."""
    chosen = [c for c in COMMAND_TYPES if c in set(predicted)] or list(COMMAND_TYPES)
    cells = nearest_cells(coords, cdm.dims)
    return np.mean([cdm.maps[c].values[cells] for c in chosen], axis=0)


def scene_dis(cdm: Cdm, scene: SurveillanceScene, predicted: Iterable[str] = ()) -> np.ndarray:
    return dis_many(cdm, scene.coords, predicted)


def cdm_only_predict(cdm: Cdm, scene: SurveillanceScene, predicted: Iterable[str] = ()) -> str:
    if len(scene.planes) == 0:
        raise ValueError("empty scene")
    return scene.callsigns[argmax_first(scene_dis(cdm, scene, predicted))]
