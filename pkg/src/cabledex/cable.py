"""Deformable cable simulation: a position-based rod made of point particles
carrying per-segment orientation quaternions.

Model summary
-------------
The cable is a chain of ``segment_count + 1`` particles and ``segment_count``
unit quaternions. Each step runs ``substeps`` substeps of:

1. predict: semi-implicit Euler under gravity with linear damping,
2. an iterated projection sweep over
   - stretch: plain distance constraints between neighbouring particles,
   - shear: couples each segment quaternion to the particle pair it spans,
   - bend/twist: relative-rotation constraints between neighbouring quaternions,
   - contacts: table halfspaces first, capsules in declaration order,
3. velocity update from positions (and angular velocity from quaternions).

The regime is quasi-static: velocities are heavily damped so the cable follows
the contacts that move it and settles quickly when they stop.

Compliance convention: a compliance ``a >= 0`` makes a projection remove only
``1/(1+a)`` of the constraint violation per iteration, so an isolated pair
retains exactly ``C * a/(1+a)`` after one iteration and a rigid constraint
(``a = 0``) is satisfied exactly.

Determinism: the solver is single threaded and sweeps constraints in a fixed
order, so identical state and inputs give bit-identical results. Capsule order
inside a ContactSet is part of that contract.

Frames: world Z is up (gravity -Z), the table is the plane z = 0 unless a
scene says otherwise. Units are SI (meters, kilograms, seconds, radians).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np
from numba import njit

from .errors import PlacementError, SolverFailure, ConfigError
from .transforms import quat_from_two_vectors, quat_rotate

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# specs and parameters
# ---------------------------------------------------------------------------


# the six supported cable types and their diameters in meters
CABLE_DIAMETERS = {
    "A": 0.012,
    "B": 0.010,
    "C": 0.014,
    "D": 0.016,
    "E": 0.008,
    "F": 0.013,
}


@dataclass(frozen=True)
class CableSpec:
    """Physical description of one cable type."""

    label: str
    diameter: float  # meters
    length: float = 0.5  # meters
    linear_density: float = 0.06  # kg/m
    stretch_compliance: float = 0.0  # dimensionless, 0 = inextensible
    bend_twist_compliance: float = 900.0  # dimensionless, larger = floppier
    surface_friction: float = 0.9  # Coulomb coefficient against any surface
    segment_count: int = 40

    def __post_init__(self):
        if self.label not in CABLE_DIAMETERS:
            known = ", ".join(sorted(CABLE_DIAMETERS))
            raise ConfigError(f"unknown cable label {self.label!r} (one of {known})")
        if abs(self.diameter - CABLE_DIAMETERS[self.label]) > 1e-12:
            raise ConfigError(
                f"cable {self.label} has diameter {CABLE_DIAMETERS[self.label]} m, "
                f"got {self.diameter}"
            )
        if self.diameter <= 0.0 or self.length <= 0.0:
            raise ConfigError("cable diameter and length must be positive")
        if self.segment_count < 2:
            raise ConfigError("cable needs at least 2 segments")
        if self.linear_density <= 0.0:
            raise ConfigError("linear density must be positive")
        if min(self.stretch_compliance, self.bend_twist_compliance) < 0.0:
            raise ConfigError("compliance must be >= 0")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def segment_length(self) -> float:
        return self.length / self.segment_count

    @property
    def mass(self) -> float:
        return self.linear_density * self.length


@dataclass(frozen=True)
class SimParams:
    """Solver timing and tolerances."""

    dt: float = 1.0 / 240.0  # seconds per physics substep
    substeps: int = 8  # substeps per step(); 8 x 1/240 s = one 30 Hz tick
    solver_iterations: int = 20
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    linear_damping: float = 5.0  # 1/s, applied in the velocity update
    penetration_tolerance: float = 1.0e-3  # meters
    contact_stiffness: float = 1.0  # fraction of contact violation removed per pass
    friction_model: str = "coulomb_projected"

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.substeps < 1 or self.solver_iterations < 1:
            raise ConfigError("substeps and solver_iterations must be >= 1")
        if not (0.0 < self.contact_stiffness <= 1.0):
            raise ConfigError("contact_stiffness must lie in (0, 1]")
        if self.friction_model != "coulomb_projected":
            raise ConfigError(
                f"unsupported friction model {self.friction_model!r}"
            )

    @property
    def tick_dt(self) -> float:
        return self.dt * self.substeps


# ---------------------------------------------------------------------------
# contacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Halfspace:
    """Solid region n . x <= offset; particles are kept on the + side."""

    normal: tuple[float, float, float]
    offset: float = 0.0


@dataclass(frozen=True)
class Capsule:
    """Swept-sphere segment from a to b.

    surface_velocity is the translational velocity of the capsule during the
    step; the solver moves the endpoints accordingly and friction transmits
    that motion to touching cable particles. compliance > 0 softens the
    contact (a squishable fingertip), still within the global penetration
    tolerance for sane values.
    """

    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float
    surface_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    compliance: float = 0.0


@dataclass(frozen=True)
class ContactSet:
    halfspaces: tuple[Halfspace, ...] = ()
    capsules: tuple[Capsule, ...] = ()

    @staticmethod
    def table(z: float = 0.0) -> "ContactSet":
        return ContactSet(halfspaces=(Halfspace((0.0, 0.0, 1.0), z),))


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class CableState:
    """Complete dynamic state; positions (n+1,3), orientations (n,4) wxyz."""

    positions: np.ndarray
    orientations: np.ndarray
    velocities: np.ndarray
    angular_velocities: np.ndarray

    def copy(self) -> "CableState":
        return CableState(
            self.positions.copy(),
            self.orientations.copy(),
            self.velocities.copy(),
            self.angular_velocities.copy(),
        )

    @property
    def particle_count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CableLayout:
    """Initial placement. kind is 'straight_line' or 'arc'.

    origin is the first end-tip position, heading the initial tangent yaw in
    the XY plane. Arc layouts bend left with radius length/arc_angle.
    """

    kind: str = "straight_line"
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heading: float = 0.0  # radians, 0 = +X
    arc_angle: float = math.pi

    def __post_init__(self):
        if self.kind not in ("straight_line", "arc"):
            raise ConfigError(f"unknown layout kind {self.kind!r}")
        if self.kind == "arc" and not (0.0 < self.arc_angle <= 2.0 * math.pi):
            raise ConfigError("arc_angle must lie in (0, 2*pi]")


def init_cable(spec: CableSpec, layout: CableLayout, floor_z: float = 0.0) -> CableState:
    """Drape a resting cable according to the layout.

    Particles are evenly spaced at rest length, orientations aligned with the
    local tangent, velocities zero. Layouts that would start below the table
    plane are rejected.
    """
    if layout.origin[2] < floor_z + spec.radius - 1e-9:
        raise PlacementError(
            f"layout origin z={layout.origin[2]:.4f} puts the cable below the "
            f"table plane z={floor_z:.4f} (needs z >= {floor_z + spec.radius:.4f})"
        )
    n = spec.segment_count
    seg = spec.segment_length
    origin = np.asarray(layout.origin, dtype=np.float64)
    s = np.arange(n + 1, dtype=np.float64) * seg
    if layout.kind == "straight_line":
        direction = np.array(
            [math.cos(layout.heading), math.sin(layout.heading), 0.0]
        )
        positions = origin[None, :] + s[:, None] * direction[None, :]
    else:
        radius = spec.length / layout.arc_angle
        t0 = np.array([math.cos(layout.heading), math.sin(layout.heading), 0.0])
        n0 = np.array([-t0[1], t0[0], 0.0])  # left normal
        center = origin + radius * n0
        phi = s / radius
        cos_p, sin_p = np.cos(phi), np.sin(phi)
        # rotate -n0 about +Z by phi
        rx = -n0[0] * cos_p + n0[1] * sin_p
        ry = -n0[1] * cos_p - n0[0] * sin_p
        positions = center[None, :] + radius * np.stack(
            [rx, ry, np.zeros_like(phi)], axis=1
        )
    tangents = positions[1:] - positions[:-1]
    orientations = np.empty((n, 4), dtype=np.float64)
    for i in range(n):
        orientations[i] = quat_from_two_vectors(np.array([0.0, 0.0, 1.0]), tangents[i])
    return CableState(
        positions=np.ascontiguousarray(positions),
        orientations=np.ascontiguousarray(orientations),
        velocities=np.zeros((n + 1, 3), dtype=np.float64),
        angular_velocities=np.zeros((n, 3), dtype=np.float64),
    )


def particle_inverse_masses(spec: CableSpec) -> np.ndarray:
    """Lumped masses: half a segment at the ends, a full segment inside."""
    n = spec.segment_count
    m_seg = spec.linear_density * spec.segment_length
    masses = np.full(n + 1, m_seg, dtype=np.float64)
    masses[0] = masses[-1] = 0.5 * m_seg
    return 1.0 / masses


# ---------------------------------------------------------------------------
# reference projections (also used standalone by tests and tools)
# ---------------------------------------------------------------------------


def project_stretch(
    p0: np.ndarray,
    p1: np.ndarray,
    w0: float,
    w1: float,
    rest_length: float,
    compliance: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """One distance-constraint projection for an isolated particle pair.

    With compliance 0 the pair lands exactly at rest_length; with compliance
    a > 0 the violation shrinks by the factor a/(1+a). Infinite-mass particles
    (w = 0) do not move.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    d = p1 - p0
    dist = float(np.linalg.norm(d))
    if dist < 1e-12:
        log.warning("coincident particle pair, stretch projection skipped")
        return p0.copy(), p1.copy()
    if w0 + w1 == 0.0:
        return p0.copy(), p1.copy()
    n = d / dist
    c = dist - rest_length
    corr = c / ((w0 + w1) * (1.0 + compliance))
    return p0 + w0 * corr * n, p1 - w1 * corr * n


def collide(
    state: CableState,
    spec: CableSpec,
    contacts: ContactSet,
    params: SimParams | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One contact projection pass over all particles.

    Returns (corrected_positions, normal_corrections, friction_displacements).
    Normal corrections are signed push-out distances summed per particle;
    friction displacements are the tangential position changes that model
    Coulomb friction against each surface (using the surface velocity over one
    substep as the reference surface motion). Resolution order: halfspaces
    first, then capsules in a fixed geometric order (see
    _canonical_capsule_order).
    """
    params = params or SimParams()
    x = state.positions.copy()
    prev = state.positions - state.velocities * params.dt
    normal_corr = np.zeros(x.shape[0], dtype=np.float64)
    friction = np.zeros_like(x)
    mu = spec.surface_friction
    r = spec.radius
    for hs in contacts.halfspaces:
        n = np.asarray(hs.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        for i in range(x.shape[0]):
            d = float(np.dot(x[i], n)) - hs.offset
            if d < r:
                push = (r - d) * params.contact_stiffness
                x[i] += push * n
                normal_corr[i] += push
                f = _friction_step(x[i], prev[i], np.zeros(3), n, mu * push, params.dt)
                x[i] += f
                friction[i] += f
    for cap in _canonical_capsule_order(contacts.capsules):
        a = np.asarray(cap.a, dtype=np.float64)
        b = np.asarray(cap.b, dtype=np.float64)
        v_surf = np.asarray(cap.surface_velocity, dtype=np.float64)
        reach = cap.radius + r
        soft = params.contact_stiffness / (1.0 + cap.compliance)
        ab = b - a
        denom = float(np.dot(ab, ab))
        for i in range(x.shape[0]):
            if denom < 1e-12:
                closest = a
            else:
                t = min(1.0, max(0.0, float(np.dot(x[i] - a, ab)) / denom))
                closest = a + t * ab
            delta = x[i] - closest
            dist = float(np.linalg.norm(delta))
            if dist < reach and dist > 1e-12:
                n = delta / dist
                push = (reach - dist) * soft
                x[i] += push * n
                normal_corr[i] += push
                f = _friction_step(x[i], prev[i], v_surf, n, mu * push, params.dt)
                x[i] += f
                friction[i] += f
    return x, normal_corr, friction


def _friction_step(x, x_prev, v_surf, n, cap, dt) -> np.ndarray:
    """Positional Coulomb friction: cancel tangential motion relative to the
    surface, fully when below the stick threshold, proportionally otherwise."""
    rel = (x - x_prev) - v_surf * dt
    tang = rel - np.dot(rel, n) * n
    norm = float(np.linalg.norm(tang))
    if norm < 1e-12:
        return np.zeros(3)
    if norm <= cap:
        return -tang
    return -tang * (cap / norm)


# ---------------------------------------------------------------------------
# compiled solver kernel
# ---------------------------------------------------------------------------


@njit(cache=True)
def _advance(
    x,
    q,
    v,
    om,
    inv_m,
    inv_mq,
    rest_len,
    radius,
    mu,
    stretch_soft,
    shear_soft,
    bend_soft,
    substeps,
    n_iter,
    dt,
    gx,
    gy,
    gz,
    damping,
    hs_n,
    hs_off,
    hs_soft,
    cap_a,
    cap_b,
    cap_r,
    cap_v,
    cap_soft,
):  # pragma: no cover - exercised through step()
    n_part = x.shape[0]
    n_seg = q.shape[0]
    n_hs = hs_off.shape[0]
    n_cap = cap_r.shape[0]
    x_prev = np.empty_like(x)
    q_prev = np.empty_like(q)
    damp = 1.0 / (1.0 + damping * dt)
    # tridiagonal stretch-solve work arrays
    s_n = np.empty((n_seg, 3))
    s_c = np.empty(n_seg)
    s_diag = np.empty(n_seg)
    s_up = np.empty(n_seg)
    s_lam = np.empty(n_seg)
    # particles whose friction clamp engaged in stick mode this iteration;
    # the repair solve treats them as immovable so contact authority survives
    stick = np.zeros(n_part, dtype=np.uint8)
    w_eff = np.empty(n_part)
    for _sub in range(substeps):
        # ------------------------------------------------ predict
        for i in range(n_part):
            for k in range(3):
                x_prev[i, k] = x[i, k]
            v[i, 0] += gx * dt
            v[i, 1] += gy * dt
            v[i, 2] += gz * dt
            for k in range(3):
                x[i, k] += v[i, k] * dt
        for j in range(n_seg):
            for k in range(4):
                q_prev[j, k] = q[j, k]
            w_, x_, y_, z_ = q[j, 0], q[j, 1], q[j, 2], q[j, 3]
            ox, oy, oz = om[j, 0], om[j, 1], om[j, 2]
            # dq = 0.5 * (0, omega) * q
            dw = 0.5 * (-ox * x_ - oy * y_ - oz * z_)
            dx = 0.5 * (ox * w_ + oy * z_ - oz * y_)
            dy = 0.5 * (oy * w_ + oz * x_ - ox * z_)
            dz = 0.5 * (oz * w_ + ox * y_ - oy * x_)
            qw = w_ + dw * dt
            qx = x_ + dx * dt
            qy = y_ + dy * dt
            qz = z_ + dz * dt
            norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
            q[j, 0] = qw / norm
            q[j, 1] = qx / norm
            q[j, 2] = qy / norm
            q[j, 3] = qz / norm
        # advance capsules with their surface velocity
        for c in range(n_cap):
            for k in range(3):
                cap_a[c, k] += cap_v[c, k] * dt
                cap_b[c, k] += cap_v[c, k] * dt
        # ------------------------------------------------ solve
        for _it in range(n_iter):
            # stretch: distance constraints along the whole chain, solved
            # directly (the multiplier system is tridiagonal, so one Thomas
            # solve converges globally where a per-segment sweep would need
            # O(n) iterations to carry corrections down a hanging cable).
            # runs first so the contact pass, friction included, gets the
            # final say on particle positions within each iteration
            for s in range(n_seg):
                dx0 = x[s + 1, 0] - x[s, 0]
                dy0 = x[s + 1, 1] - x[s, 1]
                dz0 = x[s + 1, 2] - x[s, 2]
                dist = math.sqrt(dx0 * dx0 + dy0 * dy0 + dz0 * dz0)
                if dist < 1e-12:
                    s_n[s, 0] = 0.0
                    s_n[s, 1] = 0.0
                    s_n[s, 2] = 1.0
                    s_c[s] = dist - rest_len
                else:
                    s_n[s, 0] = dx0 / dist
                    s_n[s, 1] = dy0 / dist
                    s_n[s, 2] = dz0 / dist
                    s_c[s] = dist - rest_len
                s_diag[s] = inv_m[s] + inv_m[s + 1]
            for s in range(n_seg - 1):
                ndot = (
                    s_n[s, 0] * s_n[s + 1, 0]
                    + s_n[s, 1] * s_n[s + 1, 1]
                    + s_n[s, 2] * s_n[s + 1, 2]
                )
                s_up[s] = -inv_m[s + 1] * ndot
            s_up[n_seg - 1] = 0.0
            # Thomas solve of the symmetric tridiagonal system A lam = -C
            # (lower diagonal equals the upper one); diagonally dominant, so
            # no pivoting is needed
            s_up[0] = s_up[0] / s_diag[0]
            s_lam[0] = -s_c[0] / s_diag[0]
            for s in range(1, n_seg):
                low = -inv_m[s] * (
                    s_n[s - 1, 0] * s_n[s, 0]
                    + s_n[s - 1, 1] * s_n[s, 1]
                    + s_n[s - 1, 2] * s_n[s, 2]
                )
                m = s_diag[s] - low * s_up[s - 1]
                s_up[s] = s_up[s] / m
                s_lam[s] = (-s_c[s] - low * s_lam[s - 1]) / m
            for s in range(n_seg - 2, -1, -1):
                s_lam[s] = s_lam[s] - s_up[s] * s_lam[s + 1]
            for s in range(n_seg):
                lam = s_lam[s] * stretch_soft
                x[s, 0] -= inv_m[s] * s_n[s, 0] * lam
                x[s, 1] -= inv_m[s] * s_n[s, 1] * lam
                x[s, 2] -= inv_m[s] * s_n[s, 2] * lam
                x[s + 1, 0] += inv_m[s + 1] * s_n[s, 0] * lam
                x[s + 1, 1] += inv_m[s + 1] * s_n[s, 1] * lam
                x[s + 1, 2] += inv_m[s + 1] * s_n[s, 2] * lam
            # shear: segment direction tracks the quaternion's third director
            for s in range(n_seg):
                qw = q[s, 0]
                qx = q[s, 1]
                qy = q[s, 2]
                qz = q[s, 3]
                d3x = 2.0 * (qx * qz + qw * qy)
                d3y = 2.0 * (qy * qz - qw * qx)
                d3z = qw * qw - qx * qx - qy * qy + qz * qz
                gxx = (x[s + 1, 0] - x[s, 0]) / rest_len - d3x
                gyy = (x[s + 1, 1] - x[s, 1]) / rest_len - d3y
                gzz = (x[s + 1, 2] - x[s, 2]) / rest_len - d3z
                denom = (
                    (inv_m[s] + inv_m[s + 1]) / rest_len
                    + inv_mq[s] * 4.0 * rest_len
                    + 1e-12
                )
                gxx = gxx / denom * shear_soft
                gyy = gyy / denom * shear_soft
                gzz = gzz / denom * shear_soft
                x[s, 0] += inv_m[s] * gxx
                x[s, 1] += inv_m[s] * gyy
                x[s, 2] += inv_m[s] * gzz
                x[s + 1, 0] -= inv_m[s + 1] * gxx
                x[s + 1, 1] -= inv_m[s + 1] * gyy
                x[s + 1, 2] -= inv_m[s + 1] * gzz
                # q += 2*l*w_q * (0,gamma) * (q x e3_conj)
                bw = qz
                bx = -qy
                by = qx
                bz = -qw
                cw = -gxx * bx - gyy * by - gzz * bz
                cx = gxx * bw + gyy * bz - gzz * by
                cy = gyy * bw + gzz * bx - gxx * bz
                cz = gzz * bw + gxx * by - gyy * bx
                scale = 2.0 * inv_mq[s] * rest_len
                qw += cw * scale
                qx += cx * scale
                qy += cy * scale
                qz += cz * scale
                norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
                q[s, 0] = qw / norm
                q[s, 1] = qx / norm
                q[s, 2] = qy / norm
                q[s, 3] = qz / norm
            # bend/twist: relative quaternion of neighbours -> rest (identity)
            for s in range(n_seg - 1):
                aw = q[s, 0]
                ax = q[s, 1]
                ay = q[s, 2]
                az = q[s, 3]
                bw = q[s + 1, 0]
                bx = q[s + 1, 1]
                by = q[s + 1, 2]
                bz = q[s + 1, 3]
                # omega = conj(qa) * qb; rest relative rotation is identity,
                # whose vector part is zero under either double-cover sign,
                # so the correction drives Im(omega) to zero directly
                ox = aw * bx - ax * bw - ay * bz + az * by
                oy = aw * by + ax * bz - ay * bw - az * bx
                oz = aw * bz - ax * by + ay * bx - az * bw
                wq_sum = inv_mq[s] + inv_mq[s + 1] + 1e-12
                cx = ox / wq_sum * bend_soft
                cy = oy / wq_sum * bend_soft
                cz = oz / wq_sum * bend_soft
                tw = 0.0  # scalar part carries no constraint
                # qa += wq_a * qb * omega_corr ; qb -= wq_b * qa * omega_corr
                naw = bw * tw - bx * cx - by * cy - bz * cz
                nax = bw * cx + bx * tw + by * cz - bz * cy
                nay = bw * cy - bx * cz + by * tw + bz * cx
                naz = bw * cz + bx * cy - by * cx + bz * tw
                nbw = aw * tw - ax * cx - ay * cy - az * cz
                nbx = aw * cx + ax * tw + ay * cz - az * cy
                nby = aw * cy - ax * cz + ay * tw + az * cx
                nbz = aw * cz + ax * cy - ay * cx + az * tw
                aw += inv_mq[s] * naw
                ax += inv_mq[s] * nax
                ay += inv_mq[s] * nay
                az += inv_mq[s] * naz
                bw -= inv_mq[s + 1] * nbw
                bx -= inv_mq[s + 1] * nbx
                by -= inv_mq[s + 1] * nby
                bz -= inv_mq[s + 1] * nbz
                norm = math.sqrt(aw * aw + ax * ax + ay * ay + az * az)
                q[s, 0] = aw / norm
                q[s, 1] = ax / norm
                q[s, 2] = ay / norm
                q[s, 3] = az / norm
                norm = math.sqrt(bw * bw + bx * bx + by * by + bz * bz)
                q[s + 1, 0] = bw / norm
                q[s + 1, 1] = bx / norm
                q[s + 1, 2] = by / norm
                q[s + 1, 3] = bz / norm
            # contacts: halfspaces first, then capsules in declaration order
            for i in range(n_part):
                stick[i] = 0
            for h in range(n_hs):
                nx = hs_n[h, 0]
                ny = hs_n[h, 1]
                nz = hs_n[h, 2]
                for i in range(n_part):
                    d = x[i, 0] * nx + x[i, 1] * ny + x[i, 2] * nz - hs_off[h]
                    if d < radius:
                        push = (radius - d) * hs_soft
                        x[i, 0] += push * nx
                        x[i, 1] += push * ny
                        x[i, 2] += push * nz
                        rx = x[i, 0] - x_prev[i, 0]
                        ry = x[i, 1] - x_prev[i, 1]
                        rz = x[i, 2] - x_prev[i, 2]
                        dot = rx * nx + ry * ny + rz * nz
                        tx = rx - dot * nx
                        ty = ry - dot * ny
                        tz = rz - dot * nz
                        tn = math.sqrt(tx * tx + ty * ty + tz * tz)
                        cap = mu * push
                        if tn > 1e-12:
                            if tn <= cap:
                                x[i, 0] -= tx
                                x[i, 1] -= ty
                                x[i, 2] -= tz
                                stick[i] = 1
                            else:
                                f = cap / tn
                                x[i, 0] -= tx * f
                                x[i, 1] -= ty * f
                                x[i, 2] -= tz * f
                        else:
                            stick[i] = 1
            for c in range(n_cap):
                ax0 = cap_a[c, 0]
                ay0 = cap_a[c, 1]
                az0 = cap_a[c, 2]
                abx = cap_b[c, 0] - ax0
                aby = cap_b[c, 1] - ay0
                abz = cap_b[c, 2] - az0
                denom = abx * abx + aby * aby + abz * abz
                reach = cap_r[c] + radius
                soft = cap_soft[c]
                for i in range(n_part):
                    px = x[i, 0] - ax0
                    py = x[i, 1] - ay0
                    pz = x[i, 2] - az0
                    if denom > 1e-12:
                        t = (px * abx + py * aby + pz * abz) / denom
                        if t < 0.0:
                            t = 0.0
                        elif t > 1.0:
                            t = 1.0
                    else:
                        t = 0.0
                    cx0 = ax0 + t * abx
                    cy0 = ay0 + t * aby
                    cz0 = az0 + t * abz
                    dxp = x[i, 0] - cx0
                    dyp = x[i, 1] - cy0
                    dzp = x[i, 2] - cz0
                    dist = math.sqrt(dxp * dxp + dyp * dyp + dzp * dzp)
                    if dist < reach and dist > 1e-12:
                        nx = dxp / dist
                        ny = dyp / dist
                        nz = dzp / dist
                        push = (reach - dist) * soft
                        x[i, 0] += push * nx
                        x[i, 1] += push * ny
                        x[i, 2] += push * nz
                        rx = x[i, 0] - x_prev[i, 0] - cap_v[c, 0] * dt
                        ry = x[i, 1] - x_prev[i, 1] - cap_v[c, 1] * dt
                        rz = x[i, 2] - x_prev[i, 2] - cap_v[c, 2] * dt
                        dot = rx * nx + ry * ny + rz * nz
                        tx = rx - dot * nx
                        ty = ry - dot * ny
                        tz = rz - dot * nz
                        tn = math.sqrt(tx * tx + ty * ty + tz * tz)
                        capf = mu * push
                        if tn > 1e-12:
                            if tn <= capf:
                                x[i, 0] -= tx
                                x[i, 1] -= ty
                                x[i, 2] -= tz
                                stick[i] = 1
                            else:
                                f = capf / tn
                                x[i, 0] -= tx * f
                                x[i, 1] -= ty * f
                                x[i, 2] -= tz * f
                        else:
                            stick[i] = 1
            # repair: the contact pass re-stretches segments next to held
            # particles.  two local sweeps with stuck particles frozen push
            # the surplus away from the pins (forward handles a pin on the
            # left of a run, backward one on the right); a direct solve is
            # no good here because pinning can make the system singular
            for i in range(n_part):
                if stick[i] == 1:
                    w_eff[i] = 0.0
                else:
                    w_eff[i] = inv_m[i]
            for srev in range(2):
                for u in range(n_seg):
                    s = u if srev == 0 else n_seg - 1 - u
                    wsum = w_eff[s] + w_eff[s + 1]
                    if wsum < 1e-14:
                        continue
                    dx0 = x[s + 1, 0] - x[s, 0]
                    dy0 = x[s + 1, 1] - x[s, 1]
                    dz0 = x[s + 1, 2] - x[s, 2]
                    dist = math.sqrt(dx0 * dx0 + dy0 * dy0 + dz0 * dz0)
                    if dist < 1e-12:
                        continue
                    corr = (dist - rest_len) / (dist * wsum) * stretch_soft
                    x[s, 0] += w_eff[s] * dx0 * corr
                    x[s, 1] += w_eff[s] * dy0 * corr
                    x[s, 2] += w_eff[s] * dz0 * corr
                    x[s + 1, 0] -= w_eff[s + 1] * dx0 * corr
                    x[s + 1, 1] -= w_eff[s + 1] * dy0 * corr
                    x[s + 1, 2] -= w_eff[s + 1] * dz0 * corr
        # ------------------------------------------------ velocity update
        for i in range(n_part):
            for k in range(3):
                v[i, k] = (x[i, k] - x_prev[i, k]) / dt * damp
            if not (
                math.isfinite(x[i, 0])
                and math.isfinite(x[i, 1])
                and math.isfinite(x[i, 2])
            ):
                return i
        for j in range(n_seg):
            # omega = 2 * Im(dq * conj(q_prev)) / dt, world frame
            aw = q[j, 0]
            ax = q[j, 1]
            ay = q[j, 2]
            az = q[j, 3]
            bw = q_prev[j, 0]
            bx = q_prev[j, 1]
            by = q_prev[j, 2]
            bz = q_prev[j, 3]
            # r = q_new * conj(q_prev)
            rw = aw * bw + ax * bx + ay * by + az * bz
            rx = -aw * bx + ax * bw - ay * bz + az * by
            ry = -aw * by + ax * bz + ay * bw - az * bx
            rz = -aw * bz - ax * by + ay * bx + az * bw
            if rw < 0.0:
                rx = -rx
                ry = -ry
                rz = -rz
            om[j, 0] = 2.0 * rx / dt * damp
            om[j, 1] = 2.0 * ry / dt * damp
            om[j, 2] = 2.0 * rz / dt * damp
    return -1


def _canonical_capsule_order(capsules) -> tuple:
    """Fixed geometric processing order for capsule contacts.

    Sequential projection makes the result depend on capsule order wherever
    two capsules touch the same particle (a pinch). Sorting by a key that is
    invariant under the x -> -x mirror makes physically mirrored scenes
    resolve their contacts in the corresponding sequence, which keeps
    mirrored runs bit-exact instead of merely close.
    """
    def key(cap):
        a, b = cap.a, cap.b
        return (
            a[1] + b[1],
            a[2] + b[2],
            abs(a[0] + b[0]),
            cap.radius,
            cap.compliance,
        )

    return tuple(sorted(capsules, key=key))


def _contact_arrays(contacts: ContactSet, contact_stiffness: float = 1.0):
    n_hs = len(contacts.halfspaces)
    hs_n = np.zeros((n_hs, 3), dtype=np.float64)
    hs_off = np.zeros(n_hs, dtype=np.float64)
    for i, hs in enumerate(contacts.halfspaces):
        n = np.asarray(hs.normal, dtype=np.float64)
        hs_n[i] = n / np.linalg.norm(n)
        hs_off[i] = hs.offset
    ordered = _canonical_capsule_order(contacts.capsules)
    n_cap = len(ordered)
    cap_a = np.zeros((n_cap, 3), dtype=np.float64)
    cap_b = np.zeros((n_cap, 3), dtype=np.float64)
    cap_r = np.zeros(n_cap, dtype=np.float64)
    cap_v = np.zeros((n_cap, 3), dtype=np.float64)
    cap_soft = np.zeros(n_cap, dtype=np.float64)
    for i, cap in enumerate(ordered):
        cap_a[i] = cap.a
        cap_b[i] = cap.b
        cap_r[i] = cap.radius
        cap_v[i] = cap.surface_velocity
        cap_soft[i] = contact_stiffness / (1.0 + cap.compliance)
    return hs_n, hs_off, cap_a, cap_b, cap_r, cap_v, cap_soft


def step(
    state: CableState,
    spec: CableSpec,
    params: SimParams,
    contacts: ContactSet = ContactSet(),
) -> CableState:
    """Advance one control tick (substeps x dt) and return the new state.

    Pure with respect to its inputs: the given state is not mutated. Raises
    SolverFailure with the offending particle index if the state diverges.
    """
    out = state.copy()
    inv_m = particle_inverse_masses(spec)
    m_seg = spec.linear_density * spec.segment_length
    # rotational weight of a thin rod segment about its center
    inv_mq = np.full(
        spec.segment_count, 1.0 / (m_seg * spec.segment_length**2), dtype=np.float64
    )
    finite = np.isfinite(out.positions).all(axis=1) & np.isfinite(out.velocities).all(
        axis=1
    )
    if not finite.all():
        bad_in = int(np.argmin(finite))
        raise SolverFailure(
            f"non-finite input state at particle {bad_in}", particle_index=bad_in
        )
    hs_n, hs_off, cap_a, cap_b, cap_r, cap_v, cap_soft = _contact_arrays(
        contacts, params.contact_stiffness
    )
    gx, gy, gz = params.gravity
    bad = _advance(
        out.positions,
        out.orientations,
        out.velocities,
        out.angular_velocities,
        inv_m,
        inv_mq,
        spec.segment_length,
        spec.radius,
        spec.surface_friction,
        1.0 / (1.0 + spec.stretch_compliance),
        1.0,
        1.0 / (1.0 + spec.bend_twist_compliance),
        params.substeps,
        params.solver_iterations,
        params.dt,
        gx,
        gy,
        gz,
        params.linear_damping,
        hs_n,
        hs_off,
        params.contact_stiffness,
        cap_a,
        cap_b,
        cap_r,
        cap_v,
        cap_soft,
    )
    if bad >= 0:
        raise SolverFailure(f"rod solver diverged at particle {bad}", particle_index=bad)
    return out


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------


def mirror_cable_state(state: CableState) -> CableState:
    """Reflect a state about the Y-Z plane, exact at the bit level.

    Positions and velocities flip their x components; orientations
    conjugate to (w, x, -y, -z) and angular velocity, a pseudo-vector,
    flips y and z instead. Every component is produced by sign flips only,
    so the mirror of a mirror returns the original bytes.
    """
    flip = np.array([-1.0, 1.0, 1.0])
    qflip = np.array([1.0, 1.0, -1.0, -1.0])
    return CableState(
        positions=state.positions * flip,
        orientations=state.orientations * qflip,
        velocities=state.velocities * flip,
        angular_velocities=state.angular_velocities * -flip,
    )


def arc_length(state: CableState) -> float:
    d = np.diff(state.positions, axis=0)
    return float(np.sum(np.linalg.norm(d, axis=1)))


def keypoints(state: CableState, count: int) -> np.ndarray:
    """count points sampled along the cable at equal arc length.

    The first and last keypoint are exactly the end-tips.
    """
    if count < 2:
        raise ConfigError("keypoint count must be >= 2")
    pos = state.positions
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = np.linspace(0.0, total, count)
    out = np.empty((count, 3), dtype=np.float64)
    out[0] = pos[0]
    out[-1] = pos[-1]
    for k in range(1, count - 1):
        i = int(np.searchsorted(cum, targets[k], side="right") - 1)
        i = min(i, len(seg) - 1)
        span = seg[i]
        frac = 0.0 if span < 1e-12 else (targets[k] - cum[i]) / span
        out[k] = pos[i] + frac * (pos[i + 1] - pos[i])
    return out


def max_stretch_violation(state: CableState, spec: CableSpec) -> float:
    """max |segment length - rest| / rest over all segments."""
    seg = np.linalg.norm(np.diff(state.positions, axis=0), axis=1)
    return float(np.max(np.abs(seg - spec.segment_length)) / spec.segment_length)


def max_penetration(state: CableState, spec: CableSpec, contacts: ContactSet) -> float:
    """Largest violation of (distance to surface >= cable radius), meters."""
    worst = 0.0
    for hs in contacts.halfspaces:
        n = np.asarray(hs.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        d = state.positions @ n - hs.offset
        worst = max(worst, float(np.max(spec.radius - d, initial=0.0)))
    for cap in contacts.capsules:
        a = np.asarray(cap.a, dtype=np.float64)
        b = np.asarray(cap.b, dtype=np.float64)
        ab = b - a
        denom = float(np.dot(ab, ab))
        for p in state.positions:
            if denom < 1e-12:
                closest = a
            else:
                t = min(1.0, max(0.0, float(np.dot(p - a, ab)) / denom))
                closest = a + t * ab
            dist = float(np.linalg.norm(p - closest))
            worst = max(worst, (cap.radius + spec.radius) - dist)
    return worst


def kinetic_energy(state: CableState, spec: CableSpec) -> float:
    inv_m = particle_inverse_masses(spec)
    return float(0.5 * np.sum((1.0 / inv_m) * np.sum(state.velocities**2, axis=1)))


def min_curvature_radius(state: CableState) -> float:
    """Smallest osculating-circle radius along the centerline (discrete)."""
    p = state.positions
    best = math.inf
    for i in range(1, p.shape[0] - 1):
        a, b, c = p[i - 1], p[i], p[i + 1]
        ab = b - a
        cb = c - b
        la = np.linalg.norm(ab)
        lc = np.linalg.norm(cb)
        if la < 1e-12 or lc < 1e-12:
            continue
        cosang = float(np.dot(ab, cb) / (la * lc))
        cosang = min(1.0, max(-1.0, cosang))
        angle = math.acos(cosang)
        if angle < 1e-9:
            continue
        # turning angle over mean segment length -> curvature
        radius = 0.5 * float(la + lc) / angle
        best = min(best, radius)
    return best


__all__ = [
    "CableSpec",
    "SimParams",
    "Halfspace",
    "Capsule",
    "ContactSet",
    "CableState",
    "CableLayout",
    "init_cable",
    "particle_inverse_masses",
    "project_stretch",
    "collide",
    "step",
    "arc_length",
    "keypoints",
    "max_stretch_violation",
    "max_penetration",
    "kinetic_energy",
    "min_curvature_radius",
]
