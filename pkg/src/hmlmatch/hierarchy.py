"""Multi-level patch divisions and the hierarchical relations between patches.

Two construction modes are supported:

* ``grid``: every level is a regular ``rows x cols`` grid over the image and
  each level's grid refines the previous one, giving a non-overlapping tree
  (or a rootless forest when the first level already has several cells).
* ``explicit``: patches, rectangles and parent links are listed one by one,
  which allows partially overlapping layouts such as the texture-lifted one
  shipped in ``data/tl_hierarchy.toml``.

A :class:`PatchHierarchy` is immutable after construction.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import tomli
import tomli_w

from .errors import (
    CyclicSpec,
    InvalidSpec,
    IoFailure,
    NonDivisibleImage,
    NonNestingGrid,
    OutOfBoundsRect,
    UnknownPatch,
)

FIVE_LEVEL_GRID = ((1, 1), (1, 2), (2, 2), (4, 4), (8, 8))


@dataclass(frozen=True, order=True)
class PatchId:
    level: int
    index: int

    def __post_init__(self):
        if self.level < 1 or self.index < 1:
            raise InvalidSpec(f"patch ids are 1-based, got ({self.level}, {self.index})")

    def __str__(self):
        return f"X{self.level},{self.index}"

    @classmethod
    def parse(cls, text: str) -> "PatchId":
        """Parse ``"X2,1"`` or ``"2,1"``."""
        body = text.strip().lstrip("Xx")
        level, index = body.split(",")
        return cls(int(level), int(index))


@dataclass(frozen=True)
class PatchRect:
    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.top < 0 or self.left < 0 or self.height < 1 or self.width < 1:
            raise OutOfBoundsRect(f"invalid rectangle {self}")

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def area(self) -> int:
        return self.height * self.width

    def contains(self, other: "PatchRect") -> bool:
        return (self.top <= other.top and self.left <= other.left
                and other.bottom <= self.bottom and other.right <= self.right)

    def touches(self, other: "PatchRect") -> bool:
        """True when the two rectangles share an edge segment or overlap.

        Corner-only contact does not count.
        """
        overlap_rows = min(self.bottom, other.bottom) - max(self.top, other.top)
        overlap_cols = min(self.right, other.right) - max(self.left, other.left)
        if overlap_rows < 0 or overlap_cols < 0:
            return False
        return max(overlap_rows, overlap_cols) > 0

    def slice(self, image):
        return image[self.top:self.bottom, self.left:self.right]


@dataclass(frozen=True)
class ExplicitPatch:
    patch: PatchId
    rect: PatchRect
    parent: PatchId | None = None


@dataclass(frozen=True)
class HierarchySpec:
    """How to build a hierarchy.

    For ``mode="grid"`` only ``levels`` is used; ``image_size`` is optional and
    is filled in at build time. For ``mode="explicit"`` ``patches`` and
    ``image_size`` are required. ``rooted`` may be left as ``None`` to infer it.
    """
    mode: str
    levels: tuple[tuple[int, int], ...] = ()
    patches: tuple[ExplicitPatch, ...] = ()
    image_size: tuple[int, int] | None = None
    rooted: bool | None = None
    note: str = ""

    @classmethod
    def grid(cls, levels: Iterable[Sequence[int]], rooted: bool | None = None) -> "HierarchySpec":
        return cls(mode="grid", levels=tuple((int(r), int(c)) for r, c in levels), rooted=rooted)

    @classmethod
    def explicit(cls, patches: Iterable[ExplicitPatch], image_size: tuple[int, int],
                 rooted: bool | None = None, note: str = "") -> "HierarchySpec":
        return cls(mode="explicit", patches=tuple(patches), image_size=tuple(image_size),
                   rooted=rooted, note=note)


def parse_levels(text: str) -> tuple[tuple[int, int], ...]:
    """``"1x1,1x2,2x2"`` -> ``((1, 1), (1, 2), (2, 2))``."""
    levels = []
    for chunk in text.split(","):
        chunk = chunk.strip().lower()
        if not chunk:
            continue
        try:
            rows, cols = chunk.split("x")
            levels.append((int(rows), int(cols)))
        except ValueError:
            raise InvalidSpec(f"cannot parse level {chunk!r}; expected ROWSxCOLS") from None
    if not levels:
        raise InvalidSpec("no levels given")
    return tuple(levels)


def parse_size(text: str) -> tuple[int, int]:
    """``"32x32"`` -> ``(32, 32)`` as (height, width)."""
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise InvalidSpec(f"cannot parse image size {text!r}; expected HEIGHTxWIDTH") from None


class PatchHierarchy:
    """Patches of all levels plus the parent/child/adjacent-sibling relations.

    Patches are ordered by ``(level, index)``; within a grid level the index
    runs row-major.
    """

    def __init__(self, spec: HierarchySpec, image_size: tuple[int, int],
                 rects: dict[PatchId, PatchRect], parent_of: dict[PatchId, PatchId | None]):
        self.spec = spec
        self.image_size = (int(image_size[0]), int(image_size[1]))
        self.patches: tuple[PatchId, ...] = tuple(sorted(rects))
        self.rects = dict(rects)
        self._position = {p: k for k, p in enumerate(self.patches)}

        parents: dict[PatchId, tuple[PatchId, ...]] = {}
        children: dict[PatchId, list[PatchId]] = defaultdict(list)
        for p in self.patches:
            q = parent_of.get(p)
            parents[p] = (q,) if q is not None else ()
            if q is not None:
                children[q].append(p)
        self._parents = parents
        self._children = {p: tuple(sorted(children.get(p, ()))) for p in self.patches}

        # siblings share an actual parent; parentless top-level patches have none
        by_parent: dict[PatchId, list[PatchId]] = defaultdict(list)
        for p in self.patches:
            if parent_of.get(p) is not None:
                by_parent[parent_of[p]].append(p)
        siblings: dict[PatchId, list[PatchId]] = {p: [] for p in self.patches}
        for group in by_parent.values():
            for a_pos, a in enumerate(group):
                for b in group[a_pos + 1:]:
                    if self.rects[a].touches(self.rects[b]):
                        siblings[a].append(b)
                        siblings[b].append(a)
        self._siblings = {p: tuple(sorted(v)) for p, v in siblings.items()}

    # -- sizes ---------------------------------------------------------------
    @property
    def n_levels(self) -> int:
        return max(p.level for p in self.patches)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        counts = defaultdict(int)
        for p in self.patches:
            counts[p.level] += 1
        return tuple(counts[i] for i in range(1, self.n_levels + 1))

    def __len__(self) -> int:
        return len(self.patches)

    def __contains__(self, p) -> bool:
        return p in self._position

    def __iter__(self):
        return iter(self.patches)

    def __eq__(self, other):
        if not isinstance(other, PatchHierarchy):
            return NotImplemented
        return (self.image_size == other.image_size and self.rects == other.rects
                and self._parents == other._parents)

    def __hash__(self):
        return hash((self.image_size, self.patches))

    def __repr__(self):
        return (f"PatchHierarchy(mode={self.spec.mode!r}, image={self.image_size}, "
                f"N={len(self)}, levels={self.level_sizes})")

    @property
    def roots(self) -> tuple[PatchId, ...]:
        return tuple(p for p in self.patches if not self._parents[p])

    @property
    def rooted(self) -> bool:
        return len(self.roots) == 1

    def level(self, i: int) -> tuple[PatchId, ...]:
        return tuple(p for p in self.patches if p.level == i)

    def position(self, p: PatchId) -> int:
        self._check(p)
        return self._position[p]

    def rect(self, p: PatchId) -> PatchRect:
        self._check(p)
        return self.rects[p]

    # -- relations -----------------------------------------------------------
    def _check(self, p):
        if p not in self._position:
            raise UnknownPatch(f"patch {p} is not part of this hierarchy")

    def parents(self, p: PatchId) -> set[PatchId]:
        self._check(p)
        return set(self._parents[p])

    def children(self, p: PatchId) -> set[PatchId]:
        self._check(p)
        return set(self._children[p])

    def adjacent_siblings(self, p: PatchId) -> set[PatchId]:
        self._check(p)
        return set(self._siblings[p])

    def ancestors(self, p: PatchId) -> set[PatchId]:
        self._check(p)
        return self._closure(p, self._parents)

    def descendants(self, p: PatchId) -> set[PatchId]:
        self._check(p)
        return self._closure(p, self._children)

    @staticmethod
    def _closure(p, step):
        seen: set[PatchId] = set()
        stack = list(step[p])
        while stack:
            q = stack.pop()
            if q not in seen:
                seen.add(q)
                stack.extend(step[q])
        return seen

    def related_patches(self, p: PatchId) -> list[PatchId]:
        """Columns of the hierarchical matching matrix for ``p``.

        Order: self, parents, children, adjacent siblings; each group sorted
        by (level, index).
        """
        self._check(p)
        return [p, *self._parents[p], *self._children[p], *self._siblings[p]]

    # -- (de)serialisation ---------------------------------------------------
    def describe(self) -> str:
        lines = [f"N={len(self)}",
                 "levels=" + ",".join(str(n) for n in self.level_sizes),
                 f"image={self.image_size[0]}x{self.image_size[1]}",
                 f"rooted={'yes' if self.rooted else 'no'}",
                 "patch,top,left,height,width,parents,children,adjacent_siblings"]
        for p in self.patches:
            r = self.rects[p]
            lines.append(",".join([
                str(p), str(r.top), str(r.left), str(r.height), str(r.width),
                " ".join(map(str, self._parents[p])),
                " ".join(map(str, self._children[p])),
                " ".join(map(str, self._siblings[p])),
            ]))
        return "\n".join(lines) + "\n"

    def to_explicit_spec(self) -> HierarchySpec:
        entries = [ExplicitPatch(p, self.rects[p], self._parents[p][0] if self._parents[p] else None)
                   for p in self.patches]
        return HierarchySpec.explicit(entries, self.image_size, rooted=self.rooted)


# -- building -----------------------------------------------------------------

def build_hierarchy(spec: HierarchySpec, image_height: int | None = None,
                    image_width: int | None = None) -> PatchHierarchy:
    """Build a :class:`PatchHierarchy` from ``spec``.

    Grid mode needs the image size; explicit mode takes it from ``spec`` unless
    overridden (in which case the two must agree).
    """
    if spec.mode == "grid":
        if image_height is None or image_width is None:
            if spec.image_size is None:
                raise InvalidSpec("grid mode needs the image size")
            image_height, image_width = spec.image_size
        h = _build_grid(spec, int(image_height), int(image_width))
    elif spec.mode == "explicit":
        if spec.image_size is None:
            raise InvalidSpec("explicit spec has no image size")
        if image_height is not None and (image_height, image_width) != tuple(spec.image_size):
            raise InvalidSpec(f"image size {image_height}x{image_width} does not match "
                              f"spec size {spec.image_size[0]}x{spec.image_size[1]}")
        h = _build_explicit(spec)
    else:
        raise InvalidSpec(f"unknown hierarchy mode {spec.mode!r}")
    if spec.rooted is not None and spec.rooted != h.rooted:
        raise InvalidSpec(f"spec declares rooted={spec.rooted} but the layout has "
                          f"{len(h.roots)} top-level patch(es)")
    return h


def _build_grid(spec: HierarchySpec, height: int, width: int) -> PatchHierarchy:
    levels = spec.levels
    if not levels:
        raise InvalidSpec("grid spec has no levels")
    for rows, cols in levels:
        if rows < 1 or cols < 1:
            raise InvalidSpec(f"grid level {rows}x{cols} must have positive size")
    for (r0, c0), (r1, c1) in zip(levels, levels[1:]):
        if r1 % r0 or c1 % c0:
            raise NonNestingGrid(f"level {r1}x{c1} does not refine level {r0}x{c0}")
    rows_f, cols_f = levels[-1]
    if height < 1 or width < 1:
        raise InvalidSpec(f"image size must be positive, got {height}x{width}")
    if height % rows_f or width % cols_f:
        raise NonDivisibleImage(f"{height}x{width} image cannot be split into a "
                                f"{rows_f}x{cols_f} grid without remainder")

    rects: dict[PatchId, PatchRect] = {}
    parent_of: dict[PatchId, PatchId | None] = {}
    for lv, (rows, cols) in enumerate(levels, start=1):
        ph, pw = height // rows, width // cols
        for a in range(rows):
            for b in range(cols):
                pid = PatchId(lv, a * cols + b + 1)
                rects[pid] = PatchRect(a * ph, b * pw, ph, pw)
                if lv == 1:
                    parent_of[pid] = None
                else:
                    pr, pc = levels[lv - 2]
                    pa, pb = a // (rows // pr), b // (cols // pc)
                    parent_of[pid] = PatchId(lv - 1, pa * pc + pb + 1)
    return PatchHierarchy(spec, (height, width), rects, parent_of)


def _build_explicit(spec: HierarchySpec) -> PatchHierarchy:
    height, width = spec.image_size
    rects: dict[PatchId, PatchRect] = {}
    parent_of: dict[PatchId, PatchId | None] = {}
    for entry in spec.patches:
        if entry.patch in rects:
            raise InvalidSpec(f"patch {entry.patch} listed twice")
        r = entry.rect
        if r.bottom > height or r.right > width:
            raise OutOfBoundsRect(f"patch {entry.patch} rectangle {r} leaves the "
                                  f"{height}x{width} image")
        rects[entry.patch] = r
        parent_of[entry.patch] = entry.parent
    if not rects:
        raise InvalidSpec("explicit spec has no patches")

    per_level = defaultdict(list)
    for p in rects:
        per_level[p.level].append(p.index)
    for lv in range(1, max(per_level) + 1):
        if sorted(per_level.get(lv, [])) != list(range(1, len(per_level.get(lv, [])) + 1)) \
                or not per_level.get(lv):
            raise InvalidSpec(f"level {lv} indices must run 1..N_{lv} without gaps")

    for p, q in parent_of.items():
        if q is not None and q not in rects:
            raise InvalidSpec(f"patch {p} names unknown parent {q}")
    for p in rects:
        seen = {p}
        q = parent_of[p]
        while q is not None:
            if q in seen:
                raise CyclicSpec(f"parent chain starting at {p} loops back to {q}")
            seen.add(q)
            q = parent_of[q]
    return PatchHierarchy(spec, (height, width), rects, parent_of)


# -- spec files -----------------------------------------------------------------
# Schema (TOML):
#
#   mode = "explicit"            # or "grid"
#   rooted = false               # optional
#   note = "..."                 # optional free text
#   levels = [[1, 1], [1, 2]]    # grid mode only
#   [image]                      # required in explicit mode
#   height = 128
#   width = 128
#   [[patch]]                    # explicit mode, one table per patch
#   level = 2
#   index = 1
#   top = 0
#   left = 0
#   height = 40
#   width = 60
#   parent = [1, 1]              # omitted for top-level patches

def spec_from_dict(doc: dict) -> HierarchySpec:
    mode = doc.get("mode", "explicit")
    rooted = doc.get("rooted")
    note = doc.get("note", "")
    image = doc.get("image")
    image_size = (int(image["height"]), int(image["width"])) if image else None
    if mode == "grid":
        levels = doc.get("levels")
        if isinstance(levels, str):
            levels = parse_levels(levels)
        if not levels:
            raise InvalidSpec("grid spec needs 'levels'")
        return HierarchySpec(mode="grid", levels=tuple((int(r), int(c)) for r, c in levels),
                             image_size=image_size, rooted=rooted, note=note)
    if mode != "explicit":
        raise InvalidSpec(f"unknown hierarchy mode {mode!r}")
    if image_size is None:
        raise InvalidSpec("explicit spec needs an [image] table with height and width")
    entries = []
    for k, item in enumerate(doc.get("patch", [])):
        try:
            parent = item.get("parent")
            entries.append(ExplicitPatch(
                PatchId(int(item["level"]), int(item["index"])),
                PatchRect(int(item["top"]), int(item["left"]), int(item["height"]), int(item["width"])),
                PatchId(int(parent[0]), int(parent[1])) if parent else None,
            ))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InvalidSpec(f"patch entry {k + 1} is malformed: {exc}") from None
    return HierarchySpec.explicit(entries, image_size, rooted=rooted, note=note)


def spec_to_dict(spec: HierarchySpec) -> dict:
    doc: dict = {"mode": spec.mode}
    if spec.rooted is not None:
        doc["rooted"] = spec.rooted
    if spec.note:
        doc["note"] = spec.note
    if spec.mode == "grid":
        doc["levels"] = [list(lv) for lv in spec.levels]
    if spec.image_size is not None:
        doc["image"] = {"height": spec.image_size[0], "width": spec.image_size[1]}
    if spec.mode == "explicit":
        items = []
        for e in spec.patches:
            item = {"level": e.patch.level, "index": e.patch.index, "top": e.rect.top,
                    "left": e.rect.left, "height": e.rect.height, "width": e.rect.width}
            if e.parent is not None:
                item["parent"] = [e.parent.level, e.parent.index]
            items.append(item)
        doc["patch"] = items
    return doc


def loads_spec(text: str) -> HierarchySpec:
    try:
        return spec_from_dict(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise InvalidSpec(f"hierarchy spec is not valid TOML: {exc}") from None


def dumps_spec(spec: HierarchySpec) -> str:
    return tomli_w.dumps(spec_to_dict(spec))


def load_spec_file(path: str | Path) -> HierarchySpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read hierarchy spec {path}: {exc}") from None
    return loads_spec(text)


def save_spec_file(spec: HierarchySpec, path: str | Path) -> None:
    Path(path).write_text(dumps_spec(spec), encoding="utf-8")


def texture_lifted_spec() -> HierarchySpec:
    """Default 2-level layout for texture-lifted signatures (seven patches).

    The parent links are a best-effort guess; edit a copy of
    ``data/tl_hierarchy.toml`` to change them.
    """
    text = resources.files("hmlmatch").joinpath("data/tl_hierarchy.toml").read_text(encoding="utf-8")
    return loads_spec(text)
