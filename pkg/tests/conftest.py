"""Shared test builders: random atomic tables, a clean dataset, a fault catalog.

The random generators only emit canonical property values (values that the
CSV typing rules can represent), so parse(write(x)) == x is a fair check.
String properties must not look like ints or finite floats, floats must be
finite, and empty strings are excluded (they read back as None).
"""

import random
from datetime import datetime, timedelta, timezone

from stkit.atomic import (
    DynaRecord,
    ExtRecord,
    GeoUnit,
    GridODRecord,
    GridRecord,
    ODRecord,
    RelationRecord,
    UserUnit,
)
from stkit.dataset import AtomicDataset, Manifest

T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)

# Strings safe against numeric coercion: none of these parse as int or float.
SAFE_STRINGS = (
    "bus",
    "a,b",
    'say "hi"',
    "x y z",
    "nan",
    "inf",
    "-Infinity",
    "7.5.2",
    "line\nbreak",
    "trailing space ",
    "ünïcödé",
    "NULL",
    "0x1f",
    "1e",
)

TABLE_GENERATOR_KINDS = (
    "geo",
    "usr",
    "rel",
    "dyna_state",
    "dyna_trajectory",
    "grid",
    "od",
    "gridod",
    "ext",
)


def ts(slot, interval=300, start=T0):
    """Timestamp of a slot on a uniform grid, whole seconds, UTC."""
    return start + timedelta(seconds=slot * interval)


def random_scalar(rng):
    pick = rng.random()
    if pick < 0.15:
        return None
    if pick < 0.45:
        return int(rng.integers(-(10**9), 10**9))
    if pick < 0.75:
        mantissa = float(rng.normal())
        exponent = int(rng.integers(-6, 9))
        return mantissa * 10.0**exponent
    return SAFE_STRINGS[int(rng.integers(len(SAFE_STRINGS)))]


def random_properties(rng, names):
    return {name: random_scalar(rng) for name in names}


def random_property_names(rng, max_columns=4):
    return tuple(f"p{i}" for i in range(int(rng.integers(0, max_columns + 1))))


def _random_lonlat(rng):
    return (
        float(rng.uniform(-179.9, 179.9)),
        float(rng.uniform(-89.9, 89.9)),
    )


def random_geo_records(rng, n, prop_names):
    records = []
    for i in range(n):
        geo_type = ("Point", "LineString", "Polygon")[int(rng.integers(3))]
        if geo_type == "Point":
            coords = (_random_lonlat(rng),)
        elif geo_type == "LineString":
            coords = tuple(_random_lonlat(rng) for _ in range(int(rng.integers(2, 8))))
        else:
            ring = [_random_lonlat(rng) for _ in range(int(rng.integers(3, 7)))]
            coords = tuple(ring + [ring[0]])
        records.append(
            GeoUnit(f"g{i}", geo_type, coords, random_properties(rng, prop_names))
        )
    return records


def random_usr_records(rng, n, prop_names):
    return [
        UserUnit(f"u{i}", random_properties(rng, prop_names)) for i in range(n)
    ]


def random_rel_records(rng, n, prop_names):
    records = []
    for i in range(n):
        rel_type = ("geo", "usr", "usr2geo")[int(rng.integers(3))]
        records.append(
            RelationRecord(
                f"r{i}",
                rel_type,
                f"e{rng.integers(20)}",
                f"e{rng.integers(20)}",
                random_properties(rng, prop_names),
            )
        )
    return records


def random_dyna_records(rng, n, prop_names, dyna_type):
    records = []
    for i in range(n):
        location = None
        if dyna_type == "trajectory" and rng.random() < 0.6:
            location = f"g{rng.integers(10)}"
        records.append(
            DynaRecord(
                f"d{i}",
                dyna_type,
                ts(int(rng.integers(0, 500))),
                f"e{rng.integers(10)}",
                location,
                random_properties(rng, prop_names),
            )
        )
    return records


def random_grid_records(rng, n, prop_names):
    return [
        GridRecord(
            f"d{i}",
            "state",
            ts(int(rng.integers(0, 500))),
            int(rng.integers(0, 8)),
            int(rng.integers(0, 8)),
            random_properties(rng, prop_names),
        )
        for i in range(n)
    ]


def random_od_records(rng, n, prop_names):
    return [
        ODRecord(
            f"d{i}",
            "state",
            ts(int(rng.integers(0, 500))),
            f"g{rng.integers(10)}",
            f"g{rng.integers(10)}",
            random_properties(rng, prop_names),
        )
        for i in range(n)
    ]


def random_gridod_records(rng, n, prop_names):
    return [
        GridODRecord(
            f"d{i}",
            "state",
            ts(int(rng.integers(0, 500))),
            int(rng.integers(0, 6)),
            int(rng.integers(0, 6)),
            int(rng.integers(0, 6)),
            int(rng.integers(0, 6)),
            random_properties(rng, prop_names),
        )
        for i in range(n)
    ]


def random_ext_records(rng, n, prop_names):
    # (ext_id, time) is the identity, so give every row its own slot.
    return [
        ExtRecord(
            f"x{rng.integers(3)}",
            ts(i),
            random_properties(rng, prop_names),
        )
        for i in range(n)
    ]


def random_table(generator_kind, rng):
    """One random well-formed table: returns (suffix kind, records)."""
    prop_names = random_property_names(rng)
    n = int(rng.integers(1, 12))
    if generator_kind == "geo":
        return "geo", random_geo_records(rng, n, prop_names)
    if generator_kind == "usr":
        return "usr", random_usr_records(rng, n, prop_names)
    if generator_kind == "rel":
        return "rel", random_rel_records(rng, n, prop_names)
    if generator_kind == "dyna_state":
        return "dyna", random_dyna_records(rng, n, prop_names, "state")
    if generator_kind == "dyna_trajectory":
        return "dyna", random_dyna_records(rng, n, prop_names, "trajectory")
    if generator_kind == "grid":
        return "grid", random_grid_records(rng, n, prop_names)
    if generator_kind == "od":
        return "od", random_od_records(rng, n, prop_names)
    if generator_kind == "gridod":
        return "gridod", random_gridod_records(rng, n, prop_names)
    if generator_kind == "ext":
        return "ext", random_ext_records(rng, n, prop_names)
    raise ValueError(generator_kind)


def clean_dataset():
    """A small internally consistent dataset touching all eight tables.

    validate_dataset on this must report zero findings; the fault catalog
    below mutates copies of it. Rows the faults target are dedicated, so
    several faults can be injected at once without interfering.
    """
    geo = [
        GeoUnit("g0", "Point", ((116.0, 39.9),), {"kind": "sensor"}),
        GeoUnit("g1", "Point", ((116.1, 39.8),), {"kind": "sensor"}),
        GeoUnit("g2", "LineString", ((116.0, 39.9), (116.1, 39.8)), {"kind": "road"}),
        GeoUnit(
            "g3",
            "Polygon",
            ((116.0, 39.9), (116.1, 39.9), (116.1, 39.8), (116.0, 39.9)),
            {"kind": "zone"},
        ),
        GeoUnit("g4", "Point", ((116.2, 39.7),), {"kind": "sensor"}),
        GeoUnit("g5", "Point", ((116.3, 39.6),), {"kind": "sensor"}),
    ]
    usr = [UserUnit(f"u{i}", {}) for i in range(4)]
    rel = [
        RelationRecord("r0", "geo", "g0", "g1", {"weight": 1.0}),
        RelationRecord("r1", "geo", "g1", "g0", {"weight": 2.0}),
        RelationRecord("r2", "usr", "u0", "u1", {"weight": None}),
        RelationRecord("r3", "usr2geo", "u2", "g2", {"weight": 0.5}),
        RelationRecord("r4", "geo", "g4", "g5", {"weight": 1.5}),
    ]
    dyna = [
        DynaRecord("d0", "state", ts(0), "g0", None, {"flow": 10}),
        DynaRecord("d1", "state", ts(1), "g0", None, {"flow": 12}),
        DynaRecord("d2", "state", ts(0), "g1", None, {"flow": 7}),
        DynaRecord("d3", "trajectory", ts(2), "u0", "g0", {"flow": None}),
        DynaRecord("d4", "trajectory", ts(3), "u0", "g1", {"flow": None}),
        DynaRecord("d5", "trajectory", ts(4), "u1", "g4", {"flow": None}),
        DynaRecord("d6", "state", ts(2), "g4", None, {"flow": 3}),
    ]
    grid = [
        GridRecord("q0", "state", ts(0), 0, 0, {"inflow": 4}),
        GridRecord("q1", "state", ts(0), 1, 1, {"inflow": 6}),
        GridRecord("q2", "state", ts(1), 0, 1, {"inflow": 5}),
    ]
    od = [
        ODRecord("o0", "state", ts(0), "g0", "g1", {"demand": 3}),
        ODRecord("o1", "state", ts(1), "g1", "g4", {"demand": 2}),
    ]
    gridod = [
        GridODRecord("go0", "state", ts(0), 0, 0, 1, 1, {"demand": 1}),
        GridODRecord("go1", "state", ts(1), 1, 0, 0, 1, {"demand": 2}),
    ]
    ext = [
        ExtRecord("w0", ts(0), {"temp": 21.5}),
        ExtRecord("w0", ts(1), {"temp": 22.0}),
        ExtRecord("rain", ts(0), {"temp": 19.0}),
    ]
    manifest = Manifest(
        name="clean",
        interval_seconds=300,
        grid_rows=2,
        grid_cols=2,
        features=("flow",),
    )
    return AtomicDataset(
        manifest=manifest,
        geo=geo,
        usr=usr,
        rel=rel,
        dyna=dyna,
        grid=grid,
        od=od,
        gridod=gridod,
        ext=ext,
    )


def _copy_dataset(ds):
    import copy

    return copy.deepcopy(ds)


# Fault catalog: name -> (inject(ds), expected (table, message fragment)).
# Every fault produces exactly one error finding; injectors touch disjoint
# rows so any subset can be applied to one clean dataset copy.


def _fault_dup_geo_id(ds):
    ds.geo.append(GeoUnit("g0", "Point", ((116.0, 39.9),), {"kind": "sensor"}))


def _fault_open_polygon(ds):
    ring = list(ds.geo[3].coordinates)
    ring[-1] = (115.0, 39.0)
    ds.geo[3].coordinates = tuple(ring)


def _fault_bad_latitude(ds):
    ds.geo[1].coordinates = ((116.1, 95.0),)


def _fault_unknown_geo_type(ds):
    ds.geo[4].geo_type = "Blob"


def _fault_dup_usr_id(ds):
    ds.usr.append(UserUnit("u0", {}))


def _fault_dup_rel_id(ds):
    ds.rel.append(RelationRecord("r0", "geo", "g0", "g1", {"weight": 1.0}))


def _fault_unknown_rel_type(ds):
    ds.rel[3].rel_type = "geo2geo"


def _fault_dangling_rel_origin(ds):
    ds.rel[0].origin_id = "ghost"


def _fault_dangling_rel_des(ds):
    ds.rel[1].des_id = "ghost"


def _fault_dup_dyna_id(ds):
    ds.dyna.append(DynaRecord("d0", "state", ts(9), "g0", None, {"flow": 1}))


def _fault_unknown_dyna_type(ds):
    ds.dyna[6].dyna_type = "stream"


def _fault_dangling_state_entity(ds):
    ds.dyna[1].entity_id = "ghost"


def _fault_dangling_traj_entity(ds):
    ds.dyna[5].entity_id = "nobody"


def _fault_dangling_traj_location(ds):
    ds.dyna[4].location = "nowhere"


def _fault_grid_out_of_bounds(ds):
    ds.grid[2].row_id = 5


def _fault_dup_grid_id(ds):
    ds.grid.append(GridRecord("q0", "state", ts(9), 0, 0, {"inflow": 1}))


def _fault_dangling_od_origin(ds):
    ds.od[1].origin_id = "ghost"


def _fault_dup_od_id(ds):
    ds.od.append(ODRecord("o0", "state", ts(9), "g0", "g1", {"demand": 1}))


def _fault_gridod_out_of_bounds(ds):
    ds.gridod[1].des_col_id = 7


def _fault_dup_ext_key(ds):
    ds.ext.append(ExtRecord("w0", ts(0), {"temp": 30.0}))


FAULTS = {
    "dup_geo_id": (_fault_dup_geo_id, ("geo", "duplicate geo_id")),
    "open_polygon": (_fault_open_polygon, ("geo", "must close")),
    "bad_latitude": (_fault_bad_latitude, ("geo", "latitude")),
    "unknown_geo_type": (_fault_unknown_geo_type, ("geo", "unknown geo type")),
    "dup_usr_id": (_fault_dup_usr_id, ("usr", "duplicate usr_id")),
    "dup_rel_id": (_fault_dup_rel_id, ("rel", "duplicate rel_id")),
    "unknown_rel_type": (_fault_unknown_rel_type, ("rel", "unknown relation type")),
    "dangling_rel_origin": (
        _fault_dangling_rel_origin,
        ("rel", "origin_id 'ghost'"),
    ),
    "dangling_rel_des": (_fault_dangling_rel_des, ("rel", "des_id 'ghost'")),
    "dup_dyna_id": (_fault_dup_dyna_id, ("dyna", "duplicate dyna_id")),
    "unknown_dyna_type": (_fault_unknown_dyna_type, ("dyna", "unknown dyna type")),
    "dangling_state_entity": (
        _fault_dangling_state_entity,
        ("dyna", "entity_id 'ghost' not in .geo"),
    ),
    "dangling_traj_entity": (
        _fault_dangling_traj_entity,
        ("dyna", "entity_id 'nobody' not in .usr"),
    ),
    "dangling_traj_location": (
        _fault_dangling_traj_location,
        ("dyna", "location 'nowhere' not in .geo"),
    ),
    "grid_out_of_bounds": (_fault_grid_out_of_bounds, ("grid", "outside")),
    "dup_grid_id": (_fault_dup_grid_id, ("grid", "duplicate dyna_id")),
    "dangling_od_origin": (
        _fault_dangling_od_origin,
        ("od", "origin_id 'ghost' not in .geo"),
    ),
    "dup_od_id": (_fault_dup_od_id, ("od", "duplicate dyna_id")),
    "gridod_out_of_bounds": (
        _fault_gridod_out_of_bounds,
        ("gridod", "outside"),
    ),
    "dup_ext_key": (_fault_dup_ext_key, ("ext", "duplicate (ext_id, time)")),
}


def inject_faults(ds, names):
    """Apply the named faults to a deep copy; returns (copy, expected list)."""
    mutated = _copy_dataset(ds)
    expected = []
    for name in names:
        inject, fingerprint = FAULTS[name]
        inject(mutated)
        expected.append(fingerprint)
    return mutated, expected


def seeded_fault_subset(seed):
    """A reproducible nonempty subset of fault names."""
    rng = random.Random(seed)
    k = rng.randint(1, len(FAULTS))
    return rng.sample(sorted(FAULTS), k)
