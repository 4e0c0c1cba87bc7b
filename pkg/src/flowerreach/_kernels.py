"""Jitted inner loops shared by the dynamics and the MPPI controller.

Flat layouts (all float64):
    x      [px py pz vx vy vz qw qx qy qz wx wy wz]
    u      [thrust tau_x tau_y tau_z]
    phys   [total_mass Jxx Jyy Jzz g thrust_max tau_max 1/mass 1/Jxx 1/Jyy 1/Jzz]
    wrench [Fx Fy Fz (world)  Tx Ty Tz (body)]
    sp     [px py pz vx vy vz yaw]
    cost   [w_p w_v w_u w_T yaw_weight rate_weight hover_thrust]

The integrator works on 13-tuples so the hot loop stays in registers.
"""
import math

import numpy as np
from numba import njit, prange

from .rng import polar_pair, stream_key


@njit(cache=True, error_model="numpy", inline="always")
def _deriv(s, thrust, tx, ty, tz, wrench, phys):
    jx, jy, jz = phys[1], phys[2], phys[3]
    im, ijx, ijy, ijz = phys[7], phys[8], phys[9], phys[10]
    qw, qx, qy, qz = s[6], s[7], s[8], s[9]
    wx, wy, wz = s[10], s[11], s[12]
    # third column of R: body z-axis in world
    bx = 2.0 * (qx * qz + qw * qy)
    by = 2.0 * (qy * qz - qw * qx)
    bz = 1.0 - 2.0 * (qx * qx + qy * qy)
    hx, hy, hz = jx * wx, jy * wy, jz * wz
    return (
        s[3], s[4], s[5],
        (thrust * bx + wrench[0]) * im,
        (thrust * by + wrench[1]) * im,
        (thrust * bz + wrench[2]) * im - phys[4],
        -0.5 * (qx * wx + qy * wy + qz * wz),
        0.5 * (qw * wx + qy * wz - qz * wy),
        0.5 * (qw * wy + qz * wx - qx * wz),
        0.5 * (qw * wz + qx * wy - qy * wx),
        (tx + wrench[3] - (wy * hz - wz * hy)) * ijx,
        (ty + wrench[4] - (wz * hx - wx * hz)) * ijy,
        (tz + wrench[5] - (wx * hy - wy * hx)) * ijz,
    )


@njit(cache=True, error_model="numpy", inline="always")
def _axpy(s, h, d):
    return (
        s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2],
        s[3] + h * d[3], s[4] + h * d[4], s[5] + h * d[5],
        s[6] + h * d[6], s[7] + h * d[7], s[8] + h * d[8], s[9] + h * d[9],
        s[10] + h * d[10], s[11] + h * d[11], s[12] + h * d[12],
    )


@njit(cache=True, error_model="numpy", inline="always")
def _rk4(s, thrust, tx, ty, tz, wrench, phys, dt):
    k1 = _deriv(s, thrust, tx, ty, tz, wrench, phys)
    k2 = _deriv(_axpy(s, 0.5 * dt, k1), thrust, tx, ty, tz, wrench, phys)
    k3 = _deriv(_axpy(s, 0.5 * dt, k2), thrust, tx, ty, tz, wrench, phys)
    k4 = _deriv(_axpy(s, dt, k3), thrust, tx, ty, tz, wrench, phys)
    h = dt / 6.0
    r = (
        s[0] + h * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + h * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        s[3] + h * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        s[4] + h * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4]),
        s[5] + h * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5]),
        s[6] + h * (k1[6] + 2.0 * k2[6] + 2.0 * k3[6] + k4[6]),
        s[7] + h * (k1[7] + 2.0 * k2[7] + 2.0 * k3[7] + k4[7]),
        s[8] + h * (k1[8] + 2.0 * k2[8] + 2.0 * k3[8] + k4[8]),
        s[9] + h * (k1[9] + 2.0 * k2[9] + 2.0 * k3[9] + k4[9]),
        s[10] + h * (k1[10] + 2.0 * k2[10] + 2.0 * k3[10] + k4[10]),
        s[11] + h * (k1[11] + 2.0 * k2[11] + 2.0 * k3[11] + k4[11]),
        s[12] + h * (k1[12] + 2.0 * k2[12] + 2.0 * k3[12] + k4[12]),
    )
    iq = 1.0 / math.sqrt(r[6] * r[6] + r[7] * r[7] + r[8] * r[8] + r[9] * r[9])
    return (r[0], r[1], r[2], r[3], r[4], r[5],
            r[6] * iq, r[7] * iq, r[8] * iq, r[9] * iq,
            r[10], r[11], r[12])


@njit(cache=True, error_model="numpy", inline="always")
def _load(x):
    return (x[0], x[1], x[2], x[3], x[4], x[5], x[6],
            x[7], x[8], x[9], x[10], x[11], x[12])


@njit(cache=True, error_model="numpy", inline="always")
def _finite(s):
    total = 0.0
    for i in range(13):
        total += s[i] * 0.0
    return total == 0.0


@njit(cache=True, error_model="numpy")
def derivative(x, u, wrench, phys, out):
    d = _deriv(_load(x), u[0], u[1], u[2], u[3], wrench, phys)
    for i in range(13):
        out[i] = d[i]


@njit(cache=True, error_model="numpy")
def rk4_step(x, u, wrench, phys, dt, out):
    """One classical RK4 step with quaternion renormalization.

    Returns False if the result is not finite.
    """
    r = _rk4(_load(x), u[0], u[1], u[2], u[3], wrench, phys, dt)
    for i in range(13):
        out[i] = r[i]
    return _finite(r)


@njit(cache=True, error_model="numpy")
def integrate(x0, u, wrench, phys, dt, n_steps):
    """Hold ``u`` for ``n_steps`` RK4 steps. Returns (x, ok)."""
    s = _load(x0)
    out = np.empty(13)
    ok = True
    for _ in range(n_steps):
        s = _rk4(s, u[0], u[1], u[2], u[3], wrench, phys, dt)
        if not _finite(s):
            ok = False
            break
    for i in range(13):
        out[i] = s[i]
    return out, ok


@njit(cache=True, error_model="numpy", inline="always")
def _stage(s, thrust, tx, ty, tz, sp, cost):
    ex, ey, ez = s[0] - sp[0], s[1] - sp[1], s[2] - sp[2]
    dvx, dvy, dvz = s[3] - sp[3], s[4] - sp[4], s[5] - sp[5]
    qw, qx, qy, qz = s[6], s[7], s[8], s[9]
    yaw = math.atan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))
    dyaw = yaw - sp[6]
    if dyaw > math.pi:
        dyaw -= 2.0 * math.pi
    elif dyaw < -math.pi:
        dyaw += 2.0 * math.pi
    pos = ex * ex + ey * ey + ez * ez + cost[4] * dyaw * dyaw
    vel = dvx * dvx + dvy * dvy + dvz * dvz
    dth = thrust - cost[6]
    rate = s[10] * s[10] + s[11] * s[11] + s[12] * s[12]
    effort = dth * dth + tx * tx + ty * ty + tz * tz + cost[5] * rate
    return cost[0] * pos + cost[1] * vel + cost[2] * effort


@njit(cache=True, error_model="numpy", inline="always")
def _terminal(s, sp, cost):
    ex, ey, ez = s[0] - sp[0], s[1] - sp[1], s[2] - sp[2]
    return cost[3] * (ex * ex + ey * ey + ez * ez)


@njit(cache=True, error_model="numpy")
def stage_cost(x, u, sp, cost):
    return _stage(_load(x), u[0], u[1], u[2], u[3], sp, cost)


@njit(cache=True, error_model="numpy")
def terminal_cost(x, sp, cost):
    return _terminal(_load(x), sp, cost)


@njit(cache=True, error_model="numpy")
def rollout_cost(x0, seq, sp, cost, wrench, phys, dt):
    """Accumulated cost of ``seq`` (T, 4); +inf if the rollout diverges."""
    s = _load(x0)
    total = 0.0
    for t in range(seq.shape[0]):
        th, tx, ty, tz = seq[t, 0], seq[t, 1], seq[t, 2], seq[t, 3]
        total += _stage(s, th, tx, ty, tz, sp, cost)
        s = _rk4(s, th, tx, ty, tz, wrench, phys, dt)
        if not _finite(s):
            return np.inf
    total += _terminal(s, sp, cost)
    if not math.isfinite(total):
        return np.inf
    return total


def _sample_rollouts(x0, nominal, sigma, seed, step, sp, cost, wrench, phys, dt,
                     samples, costs):
    """Perturb, clamp and score K control sequences.

    Sample k's noise is drawn from the counter stream (seed, step, k), so the
    result does not depend on the order in which rollouts run. Normals
    ``4 t + c`` of the stream belong to step t, channel c.
    """
    n_samples = samples.shape[0]
    horizon = nominal.shape[0]
    thrust_max, tau_max = phys[5], phys[6]
    for k in prange(n_samples):
        key = stream_key(seed, step, k)
        c = np.uint64(0)
        for t in range(horizon):
            n0, n1, c = polar_pair(key, c)
            n2, n3, c = polar_pair(key, c)
            th = min(max(nominal[t, 0] + sigma[0] * n0, 0.0), thrust_max)
            tx = min(max(nominal[t, 1] + sigma[1] * n1, -tau_max), tau_max)
            ty = min(max(nominal[t, 2] + sigma[2] * n2, -tau_max), tau_max)
            tz = min(max(nominal[t, 3] + sigma[3] * n3, -tau_max), tau_max)
            samples[k, t, 0] = th
            samples[k, t, 1] = tx
            samples[k, t, 2] = ty
            samples[k, t, 3] = tz
        costs[k] = rollout_cost(x0, samples[k], sp, cost, wrench, phys, dt)


sample_rollouts_serial = njit(cache=True, error_model="numpy")(_sample_rollouts)
sample_rollouts_parallel = njit(cache=True, error_model="numpy", parallel=True)(_sample_rollouts)


@njit(cache=True, error_model="numpy")
def weighted_sum(weights, samples):
    """Sum_k w_k samples[k], accumulated in index order."""
    horizon, width = samples.shape[1], samples.shape[2]
    out = np.zeros((horizon, width))
    for k in range(samples.shape[0]):
        w = weights[k]
        if w == 0.0:
            continue
        for t in range(horizon):
            for c in range(width):
                out[t, c] += w * samples[k, t, c]
    return out
