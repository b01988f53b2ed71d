"""Region content inventories with three-level Merkle hashing.

An inventory lists the objects of one region.  Each object carries a property
block and groups of files by type; file hashes roll up into per-type hashes,
and the property hash plus the type hashes roll up into the object hash.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .core import (
    Coord,
    DomainError,
    GeometryParams,
    merkle_levels,
    merkle_root,
    sha256,
)

STANDARD_KEYS = ("Name", "Author", "Version")


class InventoryParseError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def canonical_properties(props: Mapping[str, str]) -> bytes:
    return "\n".join(f"{k}={props[k]}" for k in sorted(props)).encode("utf-8")


def file_hash(content: bytes, props: Mapping[str, str]) -> bytes:
    return sha256(content + canonical_properties(props))


@dataclass(frozen=True)
class FileEntry:
    fhash: bytes
    properties: Mapping[str, str]
    # payloads travel with cached copies only; inventories carry hashes
    content: bytes | None = field(default=None, compare=False, repr=False)

    @property
    def name(self) -> str:
        return self.properties.get("Name", "")

    @property
    def size(self) -> int:
        return len(self.content) if self.content is not None else 0

    @classmethod
    def build(cls, content: bytes, props: Mapping[str, str]) -> "FileEntry":
        props = dict(props)
        return cls(file_hash(content, props), props, content)


@dataclass(frozen=True)
class FileTypeGroup:
    type_name: str
    fthash: bytes
    files: tuple[FileEntry, ...]

    def file(self, name: str) -> FileEntry | None:
        for f in self.files:
            if f.name == name:
                return f
        return None


@dataclass(frozen=True)
class ObjectProperties:
    name: str
    author: str
    version: str
    extra: Mapping[str, str] = field(default_factory=dict)
    phash: bytes = b""

    def fields(self) -> dict[str, str]:
        out = {"Name": self.name, "Author": self.author, "Version": self.version}
        out.update(self.extra)
        return out

    def computed_hash(self) -> bytes:
        return sha256(canonical_properties(self.fields()))


@dataclass(frozen=True)
class ObjectEntry:
    oid: str
    ohash: bytes
    ocoord: Coord
    lcid: str
    properties: ObjectProperties
    file_types: tuple[FileTypeGroup, ...] = ()

    def group(self, type_name: str) -> FileTypeGroup | None:
        for g in self.file_types:
            if g.type_name == type_name:
                return g
        return None

    def iter_files(self) -> Iterable[tuple[str, FileEntry]]:
        for g in self.file_types:
            for f in g.files:
                yield g.type_name, f

    @property
    def size(self) -> int:
        return sum(f.size for _, f in self.iter_files())

    def stripped(self) -> "ObjectEntry":
        """Same entry without payloads, as it appears in an inventory."""
        groups = tuple(
            replace(g, files=tuple(replace(f, content=None) for f in g.files)) for g in self.file_types
        )
        return replace(self, file_types=groups)


@dataclass(frozen=True)
class Inventory:
    rid: str
    rcoord: Coord
    objects: tuple[ObjectEntry, ...] = ()

    def __post_init__(self):
        if not self.rid:
            raise DomainError("inventory RID must be non-empty")
        seen = set()
        for obj in self.objects:
            if obj.oid in seen:
                raise DomainError(f"duplicate OID {obj.oid!r} in inventory {self.rid}")
            seen.add(obj.oid)

    def get(self, oid: str) -> ObjectEntry | None:
        for obj in self.objects:
            if obj.oid == oid:
                return obj
        return None

    def upsert(self, obj: ObjectEntry) -> "Inventory":
        objs = list(self.objects)
        for i, old in enumerate(objs):
            if old.oid == obj.oid:
                objs[i] = obj
                break
        else:
            objs.append(obj)
        return replace(self, objects=tuple(objs))

    def remove(self, oid: str) -> "Inventory":
        return replace(self, objects=tuple(o for o in self.objects if o.oid != oid))

    def geometry_violations(self, geom: GeometryParams) -> list[str]:
        out = []
        for obj in self.objects:
            if not geom.contains(obj.ocoord) or geom.region_of(obj.ocoord) != self.rcoord:
                out.append(f"object {obj.oid} at {tuple(obj.ocoord)} is not in region {tuple(self.rcoord)}")
        return out


# -- construction -----------------------------------------------------------


def build_object(
    oid: str,
    ocoord: Coord,
    lcid: str,
    properties: ObjectProperties | Mapping[str, str],
    files: Mapping[str, Iterable[tuple[bytes, Mapping[str, str]]]] | None = None,
) -> ObjectEntry:
    """Assemble an object from raw payloads and compute every hash."""
    if not isinstance(properties, ObjectProperties):
        props = dict(properties)
        properties = ObjectProperties(
            name=props.pop("Name", ""),
            author=props.pop("Author", ""),
            version=props.pop("Version", ""),
            extra=props,
        )
    groups = []
    for type_name, items in (files or {}).items():
        entries = tuple(FileEntry.build(content, props) for content, props in items)
        groups.append(FileTypeGroup(type_name, b"", entries))
    obj = ObjectEntry(oid, b"", Coord(*ocoord), lcid, properties, tuple(groups))
    return recompute_hashes(obj)


def recompute_hashes(obj: ObjectEntry) -> ObjectEntry:
    """Canonically order the object and recompute every stored hash bottom-up."""
    if obj.properties is None:
        raise DomainError(f"object {obj.oid} has no property block")
    groups = []
    for g in sorted(obj.file_types, key=lambda g: g.type_name):
        if not g.files:
            raise DomainError(f"file type {g.type_name!r} of {obj.oid} has no files")
        files = []
        for f in sorted(g.files, key=lambda f: f.name):
            if f.content is None:
                raise DomainError(f"file {g.type_name}/{f.name} of {obj.oid} carries no content")
            files.append(replace(f, fhash=file_hash(f.content, f.properties)))
        groups.append(FileTypeGroup(g.type_name, merkle_root([f.fhash for f in files]), tuple(files)))
    names = [g.type_name for g in groups]
    if len(set(names)) != len(names):
        raise DomainError(f"duplicate file type in {obj.oid}")
    props = replace(obj.properties, phash=obj.properties.computed_hash())
    ohash = merkle_root([props.phash] + [g.fthash for g in groups])
    return replace(obj, ohash=ohash, properties=props, file_types=tuple(groups))


# -- integrity --------------------------------------------------------------


def _descend(stored: list[list[bytes]], others: list[list[list[bytes]]], visits: list[int]) -> list[int]:
    """Leaf indices where any tree in ``others`` disagrees with ``stored``.

    Only subtrees whose roots disagree are entered, and each entered node
    counts as one visit.  The root itself is assumed already visited.
    """
    top = len(stored) - 1
    frontier = [0] if any(o[top][0] != stored[top][0] for o in others) else []
    for level in range(top - 1, -1, -1):
        nxt = []
        width = len(stored[level])
        for parent in frontier:
            for child in (2 * parent, 2 * parent + 1):
                if child >= width:
                    continue  # duplicated odd leaf, same node as its sibling
                if any(o[level][child] != stored[level][child] for o in others):
                    visits[0] += 1
                    nxt.append(child)
        frontier = nxt
    return frontier


def _check_subtree(stored_root, stored_leaves, candidates, visits):
    """Return (root_is_corrupt, bad leaf indices) for one Merkle subtree.

    ``candidates`` are alternative leaf vectors recomputed from content; a leaf
    is bad when it differs from the stored one.  The stored root is corrupt
    when it matches neither the tree built from stored leaves nor any
    recomputed tree.
    """
    s_levels = merkle_levels(stored_leaves)
    c_levels = [merkle_levels(c) for c in candidates]
    root_bad = stored_root != s_levels[-1][0] and all(stored_root != c[-1][0] for c in c_levels)
    bad = _descend(s_levels, c_levels, visits) if any(
        c[-1][0] != s_levels[-1][0] for c in c_levels) else []
    return root_bad, bad


def locate_corruption(obj: ObjectEntry) -> tuple[list[str], int]:
    """Violation paths plus the number of tree nodes entered to find them.

    Paths are ``object``, ``properties``, ``types/<type>`` and
    ``types/<type>/files/<name>``.  Files without content are trusted.
    """
    visits = [1]
    actual_fhash = {
        (g.type_name, f.name): (file_hash(f.content, f.properties) if f.content is not None else f.fhash)
        for g in obj.file_types
        for f in g.files
    }
    stored_leaves = [obj.properties.phash] + [g.fthash for g in obj.file_types]
    from_content = [obj.properties.computed_hash()] + [
        merkle_root([actual_fhash[(g.type_name, f.name)] for f in g.files]) for g in obj.file_types
    ]
    from_stored_files = [obj.properties.phash] + [merkle_root([f.fhash for f in g.files]) for g in obj.file_types]

    # a component is suspect when its hash disagrees with its own children or content
    stored_levels = merkle_levels(stored_leaves)
    trees = [merkle_levels(from_content), merkle_levels(from_stored_files)]
    root_ok = obj.ohash == stored_levels[-1][0]
    mismatch = (not root_ok) or any(t[-1][0] != stored_levels[-1][0] for t in trees)
    if not mismatch:
        return [], visits[0]

    bad_components = _descend(stored_levels, trees, visits) if any(
        t[-1][0] != stored_levels[-1][0] for t in trees) else []
    violations = []
    if not root_ok and obj.ohash != trees[0][-1][0]:
        violations.append("object")
    for idx in bad_components:
        if idx == 0:
            violations.append("properties")
            continue
        g = obj.file_types[idx - 1]
        leaves = [f.fhash for f in g.files]
        actual = [actual_fhash[(g.type_name, f.name)] for f in g.files]
        type_bad, bad_files = _check_subtree(g.fthash, leaves, [actual], visits)
        if type_bad:
            violations.append(f"types/{g.type_name}")
        for fi in bad_files:
            violations.append(f"types/{g.type_name}/files/{g.files[fi].name}")
    return violations, visits[0]


def verify_object(obj: ObjectEntry) -> list[str]:
    return locate_corruption(obj)[0]


# -- minimal download -------------------------------------------------------


@dataclass(frozen=True)
class DownloadPlan:
    object_needed: bool = False
    stale_property_block: bool = False
    stale_files: frozenset[tuple[str, str]] = frozenset()

    @property
    def empty(self) -> bool:
        return not (self.object_needed or self.stale_property_block or self.stale_files)


def diff_objects(local: ObjectEntry | None, remote: ObjectEntry) -> DownloadPlan:
    """Files to fetch so that ``local`` becomes ``remote``, found top-down by hash."""
    if local is None:
        files = frozenset((t, f.name) for t, f in remote.iter_files())
        return DownloadPlan(True, True, files)
    if local.ohash == remote.ohash:
        return DownloadPlan()
    stale = set()
    for g in remote.file_types:
        mine = local.group(g.type_name)
        if mine is not None and mine.fthash == g.fthash:
            continue
        for f in g.files:
            old = mine.file(f.name) if mine is not None else None
            if old is None or old.fhash != f.fhash:
                stale.add((g.type_name, f.name))
    return DownloadPlan(False, local.properties.phash != remote.properties.phash, frozenset(stale))


# -- wire format ------------------------------------------------------------


def format_coord(p: Coord) -> str:
    return f"{_fmt_number(p[0])}, {_fmt_number(p[1])}"


def _fmt_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def parse_coord(text, path: str) -> Coord:
    if not isinstance(text, str):
        raise InventoryParseError(path, "coordinate must be a string \"x, y\"")
    parts = text.split(",")
    if len(parts) != 2:
        raise InventoryParseError(path, f"malformed coordinate {text!r}")
    try:
        return Coord(float(parts[0]), float(parts[1]))
    except ValueError:
        raise InventoryParseError(path, f"malformed coordinate {text!r}") from None


def _ordered_props(props: Mapping[str, str]) -> dict[str, str]:
    out = {k: props[k] for k in STANDARD_KEYS if k in props}
    out.update((k, props[k]) for k in sorted(props) if k not in out)
    return out


def object_to_dict(obj: ObjectEntry) -> dict:
    oprops = {"PHash": obj.properties.phash.hex()}
    oprops.update(_ordered_props(obj.properties.fields()))
    return {
        "OID": obj.oid,
        "OHash": obj.ohash.hex(),
        "OCoord": format_coord(obj.ocoord),
        "LCID": obj.lcid,
        "OProperties": oprops,
        "FileType": [
            {
                "Type": g.type_name,
                "FTHash": g.fthash.hex(),
                "Files": [{"FHash": f.fhash.hex(), "FProperties": _ordered_props(f.properties)} for f in g.files],
            }
            for g in obj.file_types
        ],
    }


def inventory_to_dict(inv: Inventory) -> dict:
    return {
        "RID": inv.rid,
        "RCoord": format_coord(inv.rcoord),
        "Object": [object_to_dict(o) for o in inv.objects],
    }


def serialize_object(obj: ObjectEntry) -> str:
    return json.dumps(object_to_dict(obj), indent=2, ensure_ascii=False) + "\n"


def serialize_inventory(inv: Inventory) -> str:
    return json.dumps(inventory_to_dict(inv), indent=2, ensure_ascii=False) + "\n"


def _require(d, key, path):
    if not isinstance(d, dict):
        raise InventoryParseError(path, "expected an object")
    if key not in d:
        raise InventoryParseError(f"{path}.{key}", "missing required field")
    return d[key]


def _digest(value, path) -> bytes:
    try:
        out = bytes.fromhex(value)
    except (TypeError, ValueError):
        raise InventoryParseError(path, "digest must be lowercase hex") from None
    if len(out) != 32:
        raise InventoryParseError(path, "digest must be 32 bytes")
    return out


def _str_map(d, path) -> dict[str, str]:
    if not isinstance(d, dict):
        raise InventoryParseError(path, "expected an object")
    for k, v in d.items():
        if not isinstance(v, str):
            raise InventoryParseError(f"{path}.{k}", "property values must be strings")
    return dict(d)


def object_from_dict(d, path: str = "$") -> ObjectEntry:
    oid = _require(d, "OID", path)
    if not isinstance(oid, str) or not oid:
        raise InventoryParseError(f"{path}.OID", "must be a non-empty string")
    lcid = _require(d, "LCID", path)
    if not isinstance(lcid, str) or not lcid:
        raise InventoryParseError(f"{path}.LCID", "must be a non-empty string")
    raw_props = _str_map(_require(d, "OProperties", path), f"{path}.OProperties")
    phash = _digest(_require(raw_props, "PHash", f"{path}.OProperties"), f"{path}.OProperties.PHash")
    raw_props.pop("PHash")
    props = ObjectProperties(
        name=raw_props.pop("Name", ""),
        author=raw_props.pop("Author", ""),
        version=raw_props.pop("Version", ""),
        extra=raw_props,
        phash=phash,
    )
    groups = []
    raw_groups = d.get("FileType", [])
    if not isinstance(raw_groups, list):
        raise InventoryParseError(f"{path}.FileType", "expected a list")
    for gi, g in enumerate(raw_groups):
        gpath = f"{path}.FileType[{gi}]"
        files = []
        raw_files = _require(g, "Files", gpath)
        if not isinstance(raw_files, list) or not raw_files:
            raise InventoryParseError(f"{gpath}.Files", "expected a non-empty list")
        for fi, f in enumerate(raw_files):
            fpath = f"{gpath}.Files[{fi}]"
            files.append(
                FileEntry(
                    _digest(_require(f, "FHash", fpath), f"{fpath}.FHash"),
                    _str_map(_require(f, "FProperties", fpath), f"{fpath}.FProperties"),
                )
            )
        groups.append(
            FileTypeGroup(
                str(_require(g, "Type", gpath)),
                _digest(_require(g, "FTHash", gpath), f"{gpath}.FTHash"),
                tuple(files),
            )
        )
    return ObjectEntry(
        oid=oid,
        ohash=_digest(_require(d, "OHash", path), f"{path}.OHash"),
        ocoord=parse_coord(_require(d, "OCoord", path), f"{path}.OCoord"),
        lcid=lcid,
        properties=props,
        file_types=tuple(groups),
    )


def _loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InventoryParseError(f"line {exc.lineno}", exc.msg) from None


def parse_object(text: str) -> ObjectEntry:
    return object_from_dict(_loads(text))


def inventory_from_dict(d, path: str = "$") -> Inventory:
    rid = _require(d, "RID", path)
    if not isinstance(rid, str) or not rid:
        raise InventoryParseError(f"{path}.RID", "must be a non-empty string")
    rcoord = parse_coord(_require(d, "RCoord", path), f"{path}.RCoord")
    raw = _require(d, "Object", path)
    if not isinstance(raw, list):
        raise InventoryParseError(f"{path}.Object", "expected a list")
    objects = []
    seen = set()
    for i, o in enumerate(raw):
        obj = object_from_dict(o, f"{path}.Object[{i}]")
        if obj.oid in seen:
            raise InventoryParseError(f"{path}.Object[{i}].OID", f"duplicate OID {obj.oid!r}")
        seen.add(obj.oid)
        objects.append(obj)
    return Inventory(rid, rcoord, tuple(objects))


def parse_inventory(text: str) -> Inventory:
    return inventory_from_dict(_loads(text))
