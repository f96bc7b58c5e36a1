"""Dataset directories: manifest, loading, validation, and raw-CSV conversion.

A dataset is a directory holding ``manifest.json`` plus one file per table
kind, named ``<name>.<suffix>``. The manifest pins the metadata that the
tables cannot express on their own: sampling interval, grid shape, declared
feature columns, and (optionally) an explicit geo ordering.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

from .atomic import (
    DYNA_TYPES,
    GEO_TYPES,
    MANDATORY_COLUMNS,
    REL_TYPES,
    DynaRecord,
    GeoUnit,
    Scalar,
    UserUnit,
    parse_table,
    parse_timestamp,
    write_table,
)
from .atomic import _check_coord_ranges  # shared range rule
from .exceptions import (
    MissingManifest,
    UnmappedMandatoryColumn,
    ValidationFailed,
)

__all__ = [
    "Manifest",
    "AtomicDataset",
    "Finding",
    "ValidationReport",
    "validate_dataset",
    "load_dataset",
    "save_dataset",
    "RawConversionSpec",
    "convert_raw_csv",
    "dataset_stats",
]


@dataclass
class Manifest:
    """Dataset-level metadata stored as manifest.json."""

    name: str
    interval_seconds: int | None = None
    grid_rows: int | None = None
    grid_cols: int | None = None
    features: tuple[str, ...] = ()
    geo_order: tuple[str, ...] | None = None

    @classmethod
    def from_json(cls, payload: Mapping) -> "Manifest":
        return cls(
            name=str(payload["name"]),
            interval_seconds=payload.get("interval_seconds"),
            grid_rows=payload.get("grid_rows"),
            grid_cols=payload.get("grid_cols"),
            features=tuple(payload.get("features", ())),
            geo_order=(
                tuple(payload["geo_order"]) if payload.get("geo_order") else None
            ),
        )

    def to_json(self) -> dict:
        payload: dict = {"name": self.name}
        if self.interval_seconds is not None:
            payload["interval_seconds"] = self.interval_seconds
        if self.grid_rows is not None:
            payload["grid_rows"] = self.grid_rows
        if self.grid_cols is not None:
            payload["grid_cols"] = self.grid_cols
        if self.features:
            payload["features"] = list(self.features)
        if self.geo_order is not None:
            payload["geo_order"] = list(self.geo_order)
        return payload


@dataclass
class AtomicDataset:
    """All tables of one dataset plus its manifest, held in memory."""

    manifest: Manifest
    geo: list = field(default_factory=list)
    usr: list = field(default_factory=list)
    rel: list = field(default_factory=list)
    dyna: list = field(default_factory=list)
    grid: list = field(default_factory=list)
    od: list = field(default_factory=list)
    gridod: list = field(default_factory=list)
    ext: list = field(default_factory=list)

    def tables(self) -> dict[str, list]:
        """Present (non-empty) tables keyed by kind."""
        return {
            kind: getattr(self, kind)
            for kind in MANDATORY_COLUMNS
            if getattr(self, kind)
        }

    def geo_order(self) -> tuple[str, ...]:
        """Spatial ordering: manifest override, else .geo file row order."""
        if self.manifest.geo_order is not None:
            return self.manifest.geo_order
        return tuple(g.geo_id for g in self.geo)


@dataclass
class Finding:
    """One validation finding, anchored to a table and (usually) a row."""

    severity: str  # "error" | "warning"
    table: str
    row: int | None
    message: str

    def __str__(self):
        where = f"{self.table}" if self.row is None else f"{self.table}:{self.row}"
        return f"[{self.severity}] {where}: {self.message}"


@dataclass
class ValidationReport:
    """All findings from one validation pass, file order preserved."""

    findings: list[Finding] = field(default_factory=list)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def summary(self) -> str:
        return f"{len(self.errors)} error(s), {len(self.warnings)} warning(s)"

    def render(self) -> str:
        lines = [str(f) for f in self.findings]
        lines.append(self.summary())
        return "\n".join(lines)


def _check_geo(ds: AtomicDataset, out: list[Finding]):
    seen: set[str] = set()
    for i, g in enumerate(ds.geo, start=1):
        if g.geo_id in seen:
            out.append(Finding("error", "geo", i, f"duplicate geo_id {g.geo_id!r}"))
            continue
        seen.add(g.geo_id)
        if g.geo_type not in GEO_TYPES:
            out.append(Finding("error", "geo", i, f"unknown geo type {g.geo_type!r}"))
            continue
        problems = []
        if g.geo_type == "Point" and len(g.coordinates) != 1:
            problems.append("Point must have exactly one coordinate pair")
        if g.geo_type == "LineString" and len(g.coordinates) < 2:
            problems.append("LineString needs at least two points")
        if g.geo_type == "Polygon":
            if len(g.coordinates) < 4:
                problems.append("Polygon ring needs at least four points")
            elif g.coordinates[0] != g.coordinates[-1]:
                problems.append("Polygon ring must close (first == last)")
        try:
            _check_coord_ranges(g.coordinates)
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            out.append(Finding("error", "geo", i, "; ".join(problems)))


def _check_usr(ds: AtomicDataset, out: list[Finding]):
    seen: set[str] = set()
    for i, u in enumerate(ds.usr, start=1):
        if u.usr_id in seen:
            out.append(Finding("error", "usr", i, f"duplicate usr_id {u.usr_id!r}"))
        seen.add(u.usr_id)


def _check_rel(ds: AtomicDataset, out: list[Finding], geo_ids, usr_ids):
    seen: set[str] = set()
    missing_side_warned: set[str] = set()
    for i, r in enumerate(ds.rel, start=1):
        if r.rel_id in seen:
            out.append(Finding("error", "rel", i, f"duplicate rel_id {r.rel_id!r}"))
            continue
        seen.add(r.rel_id)
        if r.rel_type not in REL_TYPES:
            out.append(
                Finding("error", "rel", i, f"unknown relation type {r.rel_type!r}")
            )
            continue
        origin_pool = usr_ids if r.rel_type in ("usr", "usr2geo") else geo_ids
        des_pool = geo_ids if r.rel_type in ("geo", "usr2geo") else usr_ids
        for side, value, pool, pool_name in (
            ("origin_id", r.origin_id, origin_pool, "usr" if r.rel_type in ("usr", "usr2geo") else "geo"),
            ("des_id", r.des_id, des_pool, "geo" if r.rel_type in ("geo", "usr2geo") else "usr"),
        ):
            if pool is None:
                if pool_name not in missing_side_warned:
                    missing_side_warned.add(pool_name)
                    out.append(
                        Finding(
                            "warning",
                            "rel",
                            None,
                            f"referenced .{pool_name} table absent; endpoints unresolvable",
                        )
                    )
            elif value not in pool:
                out.append(
                    Finding(
                        "error",
                        "rel",
                        i,
                        f"{side} {value!r} not found in .{pool_name}",
                    )
                )


def _check_dyna(ds: AtomicDataset, out: list[Finding], geo_ids, usr_ids):
    seen: set[str] = set()
    warned: set[str] = set()
    last_time: dict[str, object] = {}
    nonmonotone: set[str] = set()
    for i, d in enumerate(ds.dyna, start=1):
        if d.dyna_id in seen:
            out.append(Finding("error", "dyna", i, f"duplicate dyna_id {d.dyna_id!r}"))
            continue
        seen.add(d.dyna_id)
        if d.dyna_type not in DYNA_TYPES:
            out.append(
                Finding("error", "dyna", i, f"unknown dyna type {d.dyna_type!r}")
            )
            continue
        if d.dyna_type == "state":
            if geo_ids is None:
                if "state-geo" not in warned:
                    warned.add("state-geo")
                    out.append(
                        Finding(
                            "warning",
                            "dyna",
                            None,
                            "state rows present but .geo table absent; entities unresolvable",
                        )
                    )
            elif d.entity_id not in geo_ids:
                out.append(
                    Finding(
                        "error", "dyna", i, f"entity_id {d.entity_id!r} not in .geo"
                    )
                )
        else:
            if usr_ids is None:
                if "traj-usr" not in warned:
                    warned.add("traj-usr")
                    out.append(
                        Finding(
                            "warning",
                            "dyna",
                            None,
                            "trajectory rows present but .usr table absent; entities unresolvable",
                        )
                    )
            elif d.entity_id not in usr_ids:
                out.append(
                    Finding(
                        "error", "dyna", i, f"entity_id {d.entity_id!r} not in .usr"
                    )
                )
            if d.location is not None:
                if geo_ids is None:
                    if "traj-geo" not in warned:
                        warned.add("traj-geo")
                        out.append(
                            Finding(
                                "warning",
                                "dyna",
                                None,
                                "location column present but .geo table absent",
                            )
                        )
                elif d.location not in geo_ids:
                    out.append(
                        Finding(
                            "error", "dyna", i, f"location {d.location!r} not in .geo"
                        )
                    )
            prev = last_time.get(d.entity_id)
            if prev is not None and d.time < prev and d.entity_id not in nonmonotone:
                nonmonotone.add(d.entity_id)
                out.append(
                    Finding(
                        "warning",
                        "dyna",
                        i,
                        f"timestamps for entity {d.entity_id!r} are not "
                        "non-decreasing in file order",
                    )
                )
            last_time[d.entity_id] = d.time


def _check_grid_like(ds: AtomicDataset, out: list[Finding]):
    rows, cols = ds.manifest.grid_rows, ds.manifest.grid_cols
    for kind, index_fields in (
        ("grid", (("row_id", "grid_rows"), ("col_id", "grid_cols"))),
        (
            "gridod",
            (
                ("origin_row_id", "grid_rows"),
                ("origin_col_id", "grid_cols"),
                ("des_row_id", "grid_rows"),
                ("des_col_id", "grid_cols"),
            ),
        ),
    ):
        records = getattr(ds, kind)
        if not records:
            continue
        if rows is None or cols is None:
            out.append(
                Finding(
                    "error",
                    kind,
                    None,
                    "manifest lacks grid_rows/grid_cols but grid-indexed rows exist",
                )
            )
            continue
        seen: set[str] = set()
        for i, rec in enumerate(records, start=1):
            if rec.dyna_id in seen:
                out.append(
                    Finding("error", kind, i, f"duplicate dyna_id {rec.dyna_id!r}")
                )
                continue
            seen.add(rec.dyna_id)
            bad = []
            for attr, bound_name in index_fields:
                value = getattr(rec, attr)
                bound = rows if bound_name == "grid_rows" else cols
                if not 0 <= value < bound:
                    bad.append(f"{attr}={value} outside [0, {bound})")
            if bad:
                out.append(Finding("error", kind, i, "; ".join(bad)))


def _check_od(ds: AtomicDataset, out: list[Finding], geo_ids):
    seen: set[str] = set()
    warned = False
    for i, rec in enumerate(ds.od, start=1):
        if rec.dyna_id in seen:
            out.append(Finding("error", "od", i, f"duplicate dyna_id {rec.dyna_id!r}"))
            continue
        seen.add(rec.dyna_id)
        if geo_ids is None:
            if not warned:
                warned = True
                out.append(
                    Finding(
                        "warning",
                        "od",
                        None,
                        ".geo table absent; origin/destination unresolvable",
                    )
                )
            continue
        for side, value in (("origin_id", rec.origin_id), ("des_id", rec.des_id)):
            if value not in geo_ids:
                out.append(
                    Finding("error", "od", i, f"{side} {value!r} not in .geo")
                )


def _check_ext(ds: AtomicDataset, out: list[Finding]):
    seen: set = set()
    for i, rec in enumerate(ds.ext, start=1):
        key = (rec.ext_id, rec.time)
        if key in seen:
            out.append(
                Finding(
                    "error",
                    "ext",
                    i,
                    f"duplicate (ext_id, time) pair {key[0]!r} @ {key[1].isoformat()}",
                )
            )
        seen.add(key)


def validate_dataset(ds: AtomicDataset) -> ValidationReport:
    """Cross-check referential and domain invariants over in-memory tables.

    Errors: duplicate identifiers, out-of-domain enum values, malformed
    geometry, dangling references into present tables, grid indices outside
    the manifest bounds. Warnings: references into absent tables and
    non-monotone trajectory timestamps (tensorization sorts, so these are
    survivable). Findings come out in table order, then row order.
    """
    out: list[Finding] = []
    geo_ids = {g.geo_id for g in ds.geo} if ds.geo else None
    usr_ids = {u.usr_id for u in ds.usr} if ds.usr else None
    _check_geo(ds, out)
    _check_usr(ds, out)
    _check_rel(ds, out, geo_ids, usr_ids)
    _check_dyna(ds, out, geo_ids, usr_ids)
    _check_grid_like(ds, out)
    _check_od(ds, out, geo_ids)
    _check_ext(ds, out)
    order = {kind: k for k, kind in enumerate(MANDATORY_COLUMNS)}
    out.sort(key=lambda f: (order[f.table], f.row if f.row is not None else 0))
    return ValidationReport(out)


def load_dataset(path: Union[str, Path], validate: bool = True) -> AtomicDataset:
    """Load a dataset directory; raise ValidationFailed if errors are found.

    Tables are discovered as ``<name>.<suffix>`` next to ``manifest.json``,
    where ``<name>`` comes from the manifest.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise MissingManifest(f"no manifest.json in {root}")
    manifest = Manifest.from_json(json.loads(manifest_path.read_text("utf-8")))
    ds = AtomicDataset(manifest=manifest)
    for kind in MANDATORY_COLUMNS:
        table_path = root / f"{manifest.name}.{kind}"
        if table_path.is_file():
            setattr(ds, kind, parse_table(kind, table_path.read_bytes()))
    if validate:
        report = validate_dataset(ds)
        if not report.ok:
            raise ValidationFailed(report)
    return ds


def save_dataset(ds: AtomicDataset, path: Union[str, Path]) -> Path:
    """Write manifest and all non-empty tables into a directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(
        json.dumps(ds.manifest.to_json(), indent=2, sort_keys=True) + "\n", "utf-8"
    )
    for kind, records in ds.tables().items():
        (root / f"{ds.manifest.name}.{kind}").write_bytes(write_table(kind, records))
    return root


@dataclass
class RawConversionSpec:
    """Column mapping that turns an external flat CSV into atomic tables.

    ``target`` picks the output shape: ``"state"`` emits per-entity state
    rows (entity column holds the sensor/location id), ``"trajectory"`` emits
    per-user visit rows and a .geo point per distinct coordinate pair.
    """

    target: str  # "state" | "trajectory"
    time_column: str
    entity_column: str
    lat_column: str | None = None
    lon_column: str | None = None
    property_columns: tuple[str, ...] = ()
    time_format: str | None = None  # strptime format; None means ISO-8601 Z
    name: str = "converted"

    @classmethod
    def from_json(cls, payload: Mapping) -> "RawConversionSpec":
        return cls(
            target=payload["target"],
            time_column=payload["time_column"],
            entity_column=payload["entity_column"],
            lat_column=payload.get("lat_column"),
            lon_column=payload.get("lon_column"),
            property_columns=tuple(payload.get("property_columns", ())),
            time_format=payload.get("time_format"),
            name=payload.get("name", "converted"),
        )


def _parse_raw_time(cell: str, spec: RawConversionSpec):
    from datetime import datetime, timezone

    if spec.time_format is None:
        return parse_timestamp(cell)
    dt = datetime.strptime(cell, spec.time_format)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def convert_raw_csv(spec: RawConversionSpec, source: Union[bytes, str]) -> AtomicDataset:
    """Convert one flat CSV into an AtomicDataset under the given mapping.

    Raises UnmappedMandatoryColumn when a mapped column is missing from the
    raw header. The output passes :func:`validate_dataset` with zero errors.
    """
    if spec.target not in ("state", "trajectory"):
        raise ValueError(f"unknown conversion target {spec.target!r}")
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise UnmappedMandatoryColumn("raw CSV has no header row")
    header = rows[0]
    col_index = {name: i for i, name in enumerate(header)}
    needed = [spec.time_column, spec.entity_column]
    if spec.target == "trajectory":
        needed += [spec.lat_column, spec.lon_column]
    needed += list(spec.property_columns)
    for name in needed:
        if name is None:
            raise UnmappedMandatoryColumn(
                "trajectory conversion requires lat_column and lon_column"
            )
        if name not in col_index:
            raise UnmappedMandatoryColumn(f"raw CSV has no column {name!r}")

    lat_i = col_index.get(spec.lat_column) if spec.lat_column else None
    lon_i = col_index.get(spec.lon_column) if spec.lon_column else None
    from .atomic import _coerce_scalar

    ds = AtomicDataset(
        manifest=Manifest(name=spec.name, features=tuple(spec.property_columns))
    )
    if spec.target == "state":
        entity_coord: dict[str, tuple[float, float] | None] = {}
        for n, row in enumerate(rows[1:]):
            time = _parse_raw_time(row[col_index[spec.time_column]], spec)
            entity = row[col_index[spec.entity_column]]
            if entity not in entity_coord:
                coord = None
                if lat_i is not None and lon_i is not None:
                    coord = (float(row[lon_i]), float(row[lat_i]))
                entity_coord[entity] = coord
            props: dict[str, Scalar] = {
                c: _coerce_scalar(row[col_index[c]]) for c in spec.property_columns
            }
            ds.dyna.append(DynaRecord(f"d{n}", "state", time, entity, None, props))
        for entity, coord in entity_coord.items():
            ds.geo.append(
                GeoUnit(entity, "Point", (coord if coord else (0.0, 0.0),), {})
            )
    else:
        point_ids: dict[tuple[float, float], str] = {}
        users: dict[str, None] = {}
        for n, row in enumerate(rows[1:]):
            time = _parse_raw_time(row[col_index[spec.time_column]], spec)
            user = row[col_index[spec.entity_column]]
            users.setdefault(user)
            coord = (float(row[lon_i]), float(row[lat_i]))
            point = point_ids.setdefault(coord, f"p{len(point_ids)}")
            props = {c: _coerce_scalar(row[col_index[c]]) for c in spec.property_columns}
            ds.dyna.append(DynaRecord(f"d{n}", "trajectory", time, user, point, props))
        for coord, pid in point_ids.items():
            ds.geo.append(GeoUnit(pid, "Point", (coord,), {}))
        for user in users:
            ds.usr.append(UserUnit(user, {}))
    return ds


def dataset_stats(ds: AtomicDataset) -> dict:
    """Row counts, time extent, and feature coverage, JSON-friendly."""
    stats: dict = {"name": ds.manifest.name, "tables": {}}
    times = []
    for kind, records in ds.tables().items():
        stats["tables"][kind] = len(records)
        for rec in records:
            t = getattr(rec, "time", None)
            if t is not None:
                times.append(t)
    if times:
        from .atomic import format_timestamp

        stats["time_min"] = format_timestamp(min(times))
        stats["time_max"] = format_timestamp(max(times))
    if ds.manifest.features:
        stats["features"] = list(ds.manifest.features)
    if ds.manifest.interval_seconds:
        stats["interval_seconds"] = ds.manifest.interval_seconds
    if ds.manifest.grid_rows is not None:
        stats["grid_shape"] = [ds.manifest.grid_rows, ds.manifest.grid_cols]
    return stats
