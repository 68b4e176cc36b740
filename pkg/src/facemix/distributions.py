"""Race-mix design points and their geometry.

The training-set composition study samples the 3-simplex of race fractions at
89 points: the uniform center plus, on each of 4 nested simplexes, the 4
corners and 3 evenly spaced interior points per edge. All weights are exact
``Fraction`` values (7/30, not 0.2333...) so enumeration, edge interpolation,
and integer apportionment are float-free and bit-reproducible.

The same module lays the points out on the flattened tetrahedron net used for
plotting: one large triangle split into a central inverted sub-triangle plus
three corner flaps, each sub-triangle showing one face of the simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from itertools import combinations

__all__ = [
    "Race",
    "RACES",
    "RaceMix",
    "SubjectCounts",
    "NEST_LEVELS",
    "EDGE_TS",
    "UNIFORM_MIX",
    "enumerate_simplex_points",
    "mix_to_counts",
    "NetMarker",
    "net_layout",
]


class Race(IntEnum):
    """The four race categories, in canonical order."""

    AFRICAN = 0
    ASIAN = 1
    CAUCASIAN = 2
    INDIAN = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, text: str) -> "Race":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown race label: {text!r}") from None


RACES: tuple[Race, ...] = tuple(Race)


@dataclass(frozen=True)
class RaceMix:
    """Exact composition tuple: fraction of the dataset per race.

    Weights are nonnegative rationals summing to exactly 1.
    """

    weights: tuple[Fraction, Fraction, Fraction, Fraction]

    def __post_init__(self) -> None:
        if len(self.weights) != len(RACES):
            raise ValueError("a mix needs one weight per race")
        ws = tuple(Fraction(w) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        if any(w < 0 for w in ws):
            raise ValueError(f"negative weight in mix: {ws}")
        if sum(ws) != 1:
            raise ValueError(f"mix weights must sum to exactly 1, got {sum(ws)}")

    def __getitem__(self, race: Race) -> Fraction:
        return self.weights[race]

    def to_strings(self) -> tuple[str, ...]:
        """Rational text form, e.g. ('3/10', '7/30', '7/30', '7/30')."""
        return tuple(str(w) for w in self.weights)

    @classmethod
    def from_strings(cls, parts) -> "RaceMix":
        return cls(tuple(Fraction(p) for p in parts))


@dataclass(frozen=True)
class SubjectCounts:
    """Integer subjects per race; sums to the configured total."""

    counts: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.counts) != len(RACES):
            raise ValueError("need one count per race")
        if any(c < 0 for c in self.counts):
            raise ValueError(f"negative subject count: {self.counts}")

    def __getitem__(self, race: Race) -> int:
        return self.counts[race]

    @property
    def total(self) -> int:
        return sum(self.counts)


UNIFORM_MIX = RaceMix((Fraction(1, 4),) * 4)

# Nested-simplex (high, low) corner weights, outermost first. A corner of
# level s puts `high` on one race and `low` on the other three.
NEST_LEVELS: tuple[tuple[Fraction, Fraction], ...] = (
    (Fraction(1), Fraction(0)),
    (Fraction(3, 5), Fraction(2, 15)),
    (Fraction(2, 5), Fraction(1, 5)),
    (Fraction(3, 10), Fraction(7, 30)),
)

# Interior subdivision of each simplex edge into quarters.
EDGE_TS: tuple[Fraction, ...] = (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4))


def _corner(level: int, race: Race) -> RaceMix:
    high, low = NEST_LEVELS[level]
    return RaceMix(tuple(high if r == race else low for r in RACES))


@dataclass(frozen=True)
class _DesignPoint:
    mix: RaceMix
    level: int | None  # None marks the uniform center


def _design_points() -> list[_DesignPoint]:
    points = [_DesignPoint(UNIFORM_MIX, None)]
    for level in range(len(NEST_LEVELS)):
        for race in RACES:
            points.append(_DesignPoint(_corner(level, race), level))
        for a, b in combinations(RACES, 2):
            ca, cb = _corner(level, a), _corner(level, b)
            for t in EDGE_TS:
                weights = tuple(
                    wa + t * (wb - wa) for wa, wb in zip(ca.weights, cb.weights)
                )
                points.append(_DesignPoint(RaceMix(weights), level))
    return points


def enumerate_simplex_points() -> list[RaceMix]:
    """All 89 design mixes in deterministic order.

    Order: uniform center first; then per nesting level (outermost to
    innermost): the 4 corners in canonical race order, then for each corner
    pair in lexicographic order the edge points at t = 1/4, 1/2, 3/4.
    """
    return [p.mix for p in _design_points()]


def mix_to_counts(mix: RaceMix, total: int) -> SubjectCounts:
    """Apportion `total` subjects to races by largest remainder.

    Each race gets floor(weight * total); the leftover units go one each to
    the races with the largest fractional remainder. Exactly tied remainders
    are ordered by the fractional part of the double-rounded percentage share
    ``float(weight * 100) * (total / 100.0)``, largest first, then canonical
    race order. The double rounding costs the share a couple of ulps either
    way, which is what separates, say, 2/15 from 7/30 at a tied exact
    remainder of 2/3; the reference composition tables were apportioned from
    percentage shares, so this is the tie order their counts follow. The
    result always sums to `total` and each count is within one unit of its
    exact share.
    """
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    shares = [w * total for w in mix.weights]
    counts = [math.floor(s) for s in shares]
    leftover = total - sum(counts)

    def rank(race: Race) -> tuple[Fraction, float, int]:
        pct_share = float(mix.weights[race] * 100) * (total / 100.0)
        return (-(shares[race] - counts[race]), -(pct_share % 1.0), race)

    for race in sorted(RACES, key=rank)[:leftover]:
        counts[race] += 1
    return SubjectCounts(tuple(counts))


# --- flattened tetrahedron net -------------------------------------------
#
# Fixed orientation: the central inverted sub-triangle is the face omitting
# Indian; the three flaps unfold around its edges, so the pure-Indian corner
# appears at all three corners of the big triangle while African, Asian and
# Caucasian sit at the big triangle's edge midpoints. Positions are kept as
# exact barycentric coordinates of the big triangle so coincident markers on
# shared net edges can be merged by equality, not tolerance.

_BigBary = tuple[Fraction, Fraction, Fraction]

_P1: _BigBary = (Fraction(1), Fraction(0), Fraction(0))  # bottom-left corner
_P2: _BigBary = (Fraction(0), Fraction(1), Fraction(0))  # bottom-right corner
_P3: _BigBary = (Fraction(0), Fraction(0), Fraction(1))  # top corner
_M12: _BigBary = (Fraction(1, 2), Fraction(1, 2), Fraction(0))
_M23: _BigBary = (Fraction(0), Fraction(1, 2), Fraction(1, 2))
_M31: _BigBary = (Fraction(1, 2), Fraction(0), Fraction(1, 2))

# Face key = the omitted race; value maps each retained race to its vertex.
_FACE_VERTICES: dict[Race, dict[Race, _BigBary]] = {
    Race.INDIAN: {Race.AFRICAN: _M12, Race.ASIAN: _M23, Race.CAUCASIAN: _M31},
    Race.ASIAN: {Race.AFRICAN: _M12, Race.CAUCASIAN: _M31, Race.INDIAN: _P1},
    Race.CAUCASIAN: {Race.AFRICAN: _M12, Race.ASIAN: _M23, Race.INDIAN: _P2},
    Race.AFRICAN: {Race.ASIAN: _M23, Race.CAUCASIAN: _M31, Race.INDIAN: _P3},
}

# 2-D coordinates of the big triangle for rendering (unit side length).
_XY_CORNERS = ((0.0, 0.0), (1.0, 0.0), (0.5, math.sqrt(3.0) / 2.0))


def _bary_to_xy(bary: _BigBary) -> tuple[float, float]:
    x = sum(float(b) * cx for b, (cx, _) in zip(bary, _XY_CORNERS))
    y = sum(float(b) * cy for b, (_, cy) in zip(bary, _XY_CORNERS))
    return (x, y)


@dataclass(frozen=True)
class NetMarker:
    """One rendered marker: a mix at an exact net position.

    `faces` lists the sub-triangles (by omitted race) whose instance of the
    mix landed at this position; merged markers carry several.
    """

    mix: RaceMix
    faces: tuple[Race, ...]
    bary: _BigBary

    @property
    def xy(self) -> tuple[float, float]:
        return _bary_to_xy(self.bary)


def _face_position(face: Race, mix: RaceMix) -> _BigBary:
    vertices = _FACE_VERTICES[face]
    retained = [r for r in RACES if r != face]
    norm = sum(mix[r] for r in retained)
    pos = [Fraction(0)] * 3
    for r in retained:
        share = mix[r] / norm
        vert = vertices[r]
        for i in range(3):
            pos[i] += share * vert[i]
    return (pos[0], pos[1], pos[2])


def _face_centroid(face: Race) -> _BigBary:
    verts = list(_FACE_VERTICES[face].values())
    return tuple(sum(v[i] for v in verts) / 3 for i in range(3))  # type: ignore[return-value]


def net_layout(points: list[RaceMix]) -> list[NetMarker]:
    """Place mixes on the tetrahedron net, merging coincident instances.

    A level-s mix is drawn in the sub-triangle for the face omitting race d
    exactly when its d-component equals that level's low corner weight; its
    in-face position is the barycentric combination of the three retained
    weights renormalized to 1. The uniform center is drawn at every
    sub-triangle's centroid. Outer-simplex instances landing on a shared net
    edge or vertex coincide exactly and collapse to a single marker, which is
    what brings 89 mixes to 181 markers for the full design.

    Rejects mixes that are not design points (no face membership derivable).
    """
    level_of = {p.mix: p.level for p in _design_points()}
    order: list[_BigBary] = []
    groups: dict[_BigBary, tuple[RaceMix, list[Race]]] = {}

    def _add(mix: RaceMix, face: Race, pos: _BigBary) -> None:
        if pos not in groups:
            order.append(pos)
            groups[pos] = (mix, [face])
        else:
            prior, faces = groups[pos]
            if prior != mix:
                raise ValueError(
                    f"distinct mixes {prior.to_strings()} and {mix.to_strings()} "
                    "landed on one net position"
                )
            faces.append(face)

    for mix in points:
        if mix not in level_of:
            raise ValueError(f"mix {mix.to_strings()} is not one of the design points")
        level = level_of[mix]
        if level is None:
            for face in RACES:
                _add(mix, face, _face_centroid(face))
            continue
        low = NEST_LEVELS[level][1]
        member_faces = [d for d in RACES if mix[d] == low]
        if not member_faces:
            raise ValueError(f"mix {mix.to_strings()} lies on no simplex face")
        for face in member_faces:
            _add(mix, face, _face_position(face, mix))

    return [
        NetMarker(mix=groups[pos][0], faces=tuple(groups[pos][1]), bary=pos)
        for pos in order
    ]
