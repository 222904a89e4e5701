"""Cycle-rider linkage geometry, torque transfer ratios and the stimulation pattern.

Frame: crank axis at the origin, +x in the rider's facing direction, hip at
(-l_x, l_y).  The right pedal sits at l_c*(cos(-q), sin(-q)), so q is the
clockwise angle from the ground to the right crank arm; the left pedal leads
by pi.  The knee is placed on the upper side of the hip-pedal line.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import bisect

from . import _kernels as K
from .errors import ClosureViolation, ConfigError, EpsilonTooLarge, SingularConfiguration

TWO_PI = 2.0 * math.pi
CLOSURE_GRID = 4096
# minimum distance (rad) of the knee angle from 0 and pi anywhere on the cycle
KNEE_MARGIN = 1e-3


class Side(enum.Enum):
    R = "R"
    L = "L"

    @property
    def offset(self) -> float:
        """Pedal phase relative to the right crank arm."""
        return 0.0 if self is Side.R else math.pi


def _as_side(side) -> Side:
    return side if isinstance(side, Side) else Side(str(side).upper())


@dataclass(frozen=True)
class RiderGeometry:
    """Limb and seat dimensions in meters."""

    thigh_length: float
    shank_length: float
    crank_length: float
    hip_horizontal: float
    hip_vertical: float

    def __post_init__(self):
        for name in ("thigh_length", "shank_length", "crank_length"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be a positive finite length, got {val!r}")
        for name in ("hip_horizontal", "hip_vertical"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(f"{name} must be >= 0, got {val!r}")
        if self.hip_horizontal + self.hip_vertical <= 0:
            raise ConfigError("hip cannot coincide with the crank axis")
        d_min, d_max = self.hip_pedal_range()
        lt, ls = self.thigh_length, self.shank_length
        if not (abs(lt - ls) < d_min and lt + ls > d_max):
            raise ClosureViolation(
                f"legs cannot reach the pedal over the whole cycle: hip-pedal distance spans "
                f"[{d_min:.6g}, {d_max:.6g}] m, leg reach is [{abs(lt - ls):.6g}, {lt + ls:.6g}] m"
            )
        qs = np.linspace(0.0, TWO_PI, CLOSURE_GRID, endpoint=False)
        d2 = self._hip_pedal_sq(qs)
        ck = (lt * lt + ls * ls - d2) / (2 * lt * ls)
        qk = np.arccos(np.clip(ck, -1, 1))
        # analytic extremes of the distance, not just the grid
        ck_ext = (lt * lt + ls * ls - np.array([d_min, d_max]) ** 2) / (2 * lt * ls)
        qk_all = np.concatenate([qk, np.arccos(np.clip(ck_ext, -1, 1))])
        if qk_all.min() < KNEE_MARGIN or qk_all.max() > math.pi - KNEE_MARGIN:
            raise ClosureViolation(
                f"knee angle comes within {KNEE_MARGIN} rad of full flexion/extension"
            )

    @property
    def hip_distance(self) -> float:
        return math.hypot(self.hip_horizontal, self.hip_vertical)

    def hip_pedal_range(self) -> tuple[float, float]:
        r = self.hip_distance
        return abs(r - self.crank_length), r + self.crank_length

    def _hip_pedal_sq(self, q, offset=0.0):
        lc, lx, ly = self.crank_length, self.hip_horizontal, self.hip_vertical
        a = np.asarray(q) + offset
        return lc * lc + lx * lx + ly * ly + 2 * lc * (lx * np.cos(a) + ly * np.sin(a))

    def pedal_position(self, q, side=Side.R):
        a = np.asarray(q) + _as_side(side).offset
        return self.crank_length * np.cos(-a), self.crank_length * np.sin(-a)

    @property
    def hip_position(self) -> tuple[float, float]:
        return -self.hip_horizontal, self.hip_vertical

    @cached_property
    def vector(self) -> np.ndarray:
        """Model parameter vector with massless legs (kinematics only)."""
        p = np.zeros(K.N_MODEL)
        p[K.L_T] = self.thigh_length
        p[K.L_S] = self.shank_length
        p[K.L_C] = self.crank_length
        p[K.L_X] = self.hip_horizontal
        p[K.L_Y] = self.hip_vertical
        p[K.OMEGA0] = p[K.C_OM1] = p[K.C_OM2] = 1.0
        return p


def knee_position(geom: RiderGeometry, q: float, side=Side.R) -> tuple[float, float]:
    """Knee joint center; the knee sits above the hip-pedal line."""
    _check_closure(geom, q, side)
    wt, ws, dwt, dws, ax, ay, bx, by, qk, bk = K.side_terms(float(q), _as_side(side).offset,
                                                            geom.vector)
    hx, hy = geom.hip_position
    return hx + ax, hy + ay


def _check_closure(geom, q, side):
    d = math.sqrt(float(geom._hip_pedal_sq(q, _as_side(side).offset)))
    lt, ls = geom.thigh_length, geom.shank_length
    if not (abs(lt - ls) < d < lt + ls):
        raise ClosureViolation(f"hip-pedal distance {d:.6g} m cannot be spanned at q={q!r}")
    return d


def knee_angle(geom: RiderGeometry, q: float, side=Side.R) -> float:
    """Interior knee angle in (0, pi) from the law of cosines."""
    d = _check_closure(geom, q, side)
    lt, ls = geom.thigh_length, geom.shank_length
    return math.acos((lt * lt + ls * ls - d * d) / (2 * lt * ls))


def torque_transfer_ratio(geom: RiderGeometry, q: float, side=Side.R) -> float:
    """B_k: crank torque per unit quadriceps (extension) torque, negative when propulsive.

    Equal to minus the rate of change of the interior knee angle with crank angle.
    """
    side = _as_side(side)
    qk = knee_angle(geom, q, side)
    if math.sin(qk) < 1e-12:
        raise SingularConfiguration(f"leg fully extended or folded at q={q!r}")
    return K.side_terms(float(q), side.offset, geom.vector)[9]


def torque_transfer_ratio_array(geom: RiderGeometry, qs, side=Side.R) -> np.ndarray:
    """Vectorized B_k (no per-point closure check; geometry is validated at construction)."""
    qs = np.ascontiguousarray(qs, dtype=float)
    out = K.model_terms_array(qs.ravel(), geom.vector)
    col = 3 if _as_side(side) is Side.R else 4
    return out[:, col].reshape(qs.shape)


def knee_angle_array(geom: RiderGeometry, qs, side=Side.R) -> np.ndarray:
    qs = np.ascontiguousarray(qs, dtype=float)
    out = K.model_terms_array(qs.ravel(), geom.vector)
    col = 5 if _as_side(side) is Side.R else 6
    return out[:, col].reshape(qs.shape)


def dead_points(geom: RiderGeometry) -> list[float]:
    """The two crank angles where both torque transfer ratios vanish, in [0, 2pi)."""
    base = math.atan2(geom.hip_vertical, geom.hip_horizontal)
    return sorted(x % TWO_PI for x in (base, base + math.pi))


def _golden_max(f, a, b, tol=1e-10):
    """Golden-section search for the maximum of a unimodal f on [a, b]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def refined_max(f_vec, f_scalar, n_grid=4096, tol=1e-10):
    """Global maximum of a 2pi-periodic function: grid scan then golden-section polish."""
    qs = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    vals = f_vec(qs)
    i = int(np.argmax(vals))
    h = TWO_PI / n_grid
    x, fx = _golden_max(f_scalar, qs[i] - h, qs[i] + h, tol)
    if fx < vals[i]:
        return float(qs[i] % TWO_PI), float(vals[i])
    return float(x % TWO_PI), float(fx)


def max_abs_torque_ratio(geom: RiderGeometry) -> float:
    """max over the cycle of |B_k^R| (identical for the left side)."""
    p = geom.vector
    _, val = refined_max(
        lambda qs: np.abs(torque_transfer_ratio_array(geom, qs)),
        lambda q: abs(K.side_terms(q, 0.0, p)[9]),
    )
    return val


def max_propulsive_ratio(geom: RiderGeometry) -> float:
    """max over the cycle of -B_k^R."""
    p = geom.vector
    _, val = refined_max(
        lambda qs: -torque_transfer_ratio_array(geom, qs),
        lambda q: -K.side_terms(q, 0.0, p)[9],
    )
    return val


@dataclass(frozen=True)
class Interval:
    """Half-open arc [start, start + length) on the circle, start in [0, 2pi)."""

    start: float
    length: float

    @property
    def end(self) -> float:
        return self.start + self.length

    def contains(self, q) -> np.ndarray | bool:
        return (np.asarray(q) - self.start) % TWO_PI < self.length


@dataclass(frozen=True)
class RegionMap:
    """Partition of the crank cycle into right, left and uncontrolled arcs."""

    epsilon: float
    right_intervals: tuple[Interval, ...]
    left_intervals: tuple[Interval, ...]
    uncontrolled_intervals: tuple[Interval, ...]
    boundaries: np.ndarray = field(repr=False, compare=False)
    boundary_tags: np.ndarray = field(repr=False, compare=False)

    TAGS = {K.SIDE_NONE: "U", K.SIDE_R: "R", K.SIDE_L: "L"}

    def tag_code(self, q):
        """Integer region code (0 = uncontrolled, 1 = right, 2 = left) at angle(s) q."""
        x = np.asarray(q, dtype=float) % TWO_PI
        b = self.boundaries
        idx = np.searchsorted(b, x, side="right") - 1
        # angles before the first boundary belong to the last arc (wrap-around)
        idx = np.where(idx < 0, len(b) - 1, idx)
        return self.boundary_tags[idx]

    def tag(self, q) -> str:
        return self.TAGS[int(self.tag_code(q))]

    def side_at(self, q) -> Side | None:
        t = self.tag(q)
        return None if t == "U" else Side(t)

    @property
    def controlled_measure(self) -> float:
        return sum(iv.length for iv in self.right_intervals + self.left_intervals)

    @property
    def uncontrolled_measure(self) -> float:
        return sum(iv.length for iv in self.uncontrolled_intervals)

    def controlled_intervals(self) -> list[Interval]:
        return sorted(self.right_intervals + self.left_intervals, key=lambda iv: iv.start)


def _arcs_from_boundaries(bounds, tags):
    out = {K.SIDE_NONE: [], K.SIDE_R: [], K.SIDE_L: []}
    n = len(bounds)
    for i in range(n):
        start = bounds[i]
        end = bounds[i + 1] if i + 1 < n else bounds[0] + TWO_PI
        out[int(tags[i])].append(Interval(float(start), float(end - start)))
    return out


def stimulation_regions(geom: RiderGeometry, epsilon: float, n_grid: int = 4096) -> RegionMap:
    """Arcs where -B_k^s > epsilon for each side; the rest is uncontrolled.

    Boundaries are the roots of -B_k^s - epsilon, bracketed on a grid and
    refined by bisection to 1e-10 rad.
    """
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise EpsilonTooLarge(f"epsilon must be positive, got {epsilon!r}")
    peak = max_propulsive_ratio(geom)
    if epsilon >= peak:
        raise EpsilonTooLarge(f"epsilon={epsilon:.6g} must be below max(-B_k)={peak:.6g}")
    p = geom.vector
    qs = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    events = []  # (angle, side_code, entering)
    for side, code in ((Side.R, K.SIDE_R), (Side.L, K.SIDE_L)):
        off = side.offset

        def g(q, off=off):
            return -K.side_terms(q, off, p)[9] - epsilon

        vals = -torque_transfer_ratio_array(geom, qs, side) - epsilon
        nxt = np.roll(vals, -1)
        for i in np.nonzero(np.sign(vals) != np.sign(nxt))[0]:
            a = qs[i]
            b = qs[i] + TWO_PI / n_grid
            if vals[i] == 0.0:
                root = a
            else:
                root = bisect(g, a, b, xtol=1e-10, rtol=4 * np.finfo(float).eps, maxiter=200)
            events.append((root % TWO_PI, code, vals[i] <= 0 < nxt[i]))
    events.sort()
    bounds = np.array([e[0] for e in events])
    tags = np.array([e[1] if e[2] else K.SIDE_NONE for e in events], dtype=np.int64)
    arcs = _arcs_from_boundaries(bounds, tags)
    return RegionMap(
        epsilon=float(epsilon),
        right_intervals=tuple(arcs[K.SIDE_R]),
        left_intervals=tuple(arcs[K.SIDE_L]),
        uncontrolled_intervals=tuple(arcs[K.SIDE_NONE]),
        boundaries=bounds,
        boundary_tags=tags,
    )


def default_epsilon(geom: RiderGeometry, fraction: float = 0.5) -> float:
    """Stimulation threshold as a fraction of max |B_k|."""
    return fraction * max_abs_torque_ratio(geom)
