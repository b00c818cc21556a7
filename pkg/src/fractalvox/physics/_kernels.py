"""Hot numerical loops, jitted with numba.

Everything here is sequential and iterates in a fixed order so trajectories
are reproducible bit for bit.  The beam force/torque expressions are the
exact analytic gradients of `elastic_energy`; the finite-difference tests in
the suite rely on that.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_PAIR_OVERFLOW = 2

POSITION_LIMIT = 1.0e6  # meters; anything past this counts as divergence


@njit(cache=True)
def rotation_matrices(quat, out):
    """Row-major rotation matrix per mass from unit quaternions (w, x, y, z)."""
    n = quat.shape[0]
    for m in range(n):
        w = quat[m, 0]; x = quat[m, 1]; y = quat[m, 2]; z = quat[m, 3]
        xx = x * x; yy = y * y; zz = z * z
        xy = x * y; xz = x * z; yz = y * z
        wx = w * x; wy = w * y; wz = w * z
        out[m, 0, 0] = 1.0 - 2.0 * (yy + zz)
        out[m, 0, 1] = 2.0 * (xy - wz)
        out[m, 0, 2] = 2.0 * (xz + wy)
        out[m, 1, 0] = 2.0 * (xy + wz)
        out[m, 1, 1] = 1.0 - 2.0 * (xx + zz)
        out[m, 1, 2] = 2.0 * (yz - wx)
        out[m, 2, 0] = 2.0 * (xz - wy)
        out[m, 2, 1] = 2.0 * (yz + wx)
        out[m, 2, 2] = 1.0 - 2.0 * (xx + yy)


@njit(cache=True)
def actuation_scales(phase, amp, freq, t, out):
    arg = 2.0 * np.pi * freq * t
    for m in range(phase.shape[0]):
        out[m] = 1.0 + amp * np.sin(arg + phase[m])


@njit(cache=True)
def beam_forces(pos, vel, angvel, rmat, scale,
                b_i, b_j, b_axis, b_len0, b_kax, b_cb, b_kt,
                b_dax, b_dcb, b_dkt, force, torque):
    """Accumulate elastic and bond-damping forces/torques of every beam.

    Per beam the deformation measures are: stretch of the center line,
    the two node-tangent-versus-chord rotation vectors (bending and shear),
    and the relative twist of the node frames about the chord.  Damping acts
    on the rates of the same measures, so force pairs cancel exactly and the
    work done by damping is never positive.
    """
    nb = b_i.shape[0]
    for b in range(nb):
        i = b_i[b]; j = b_j[b]; a = b_axis[b]
        a2 = (a + 1) % 3
        rx = pos[j, 0] - pos[i, 0]
        ry = pos[j, 1] - pos[i, 1]
        rz = pos[j, 2] - pos[i, 2]
        ell = np.sqrt(rx * rx + ry * ry + rz * rz)
        inv = 1.0 / ell
        ux = rx * inv; uy = ry * inv; uz = rz * inv  # chord direction i -> j
        tix = rmat[i, 0, a]; tiy = rmat[i, 1, a]; tiz = rmat[i, 2, a]
        tjx = rmat[j, 0, a]; tjy = rmat[j, 1, a]; tjz = rmat[j, 2, a]
        pix = rmat[i, 0, a2]; piy = rmat[i, 1, a2]; piz = rmat[i, 2, a2]
        pjx = rmat[j, 0, a2]; pjy = rmat[j, 1, a2]; pjz = rmat[j, 2, a2]

        # deformation measures
        rest = b_len0[b] * 0.5 * (scale[i] + scale[j])
        eps = ell - rest
        uix = uy * tiz - uz * tiy
        uiy = uz * tix - ux * tiz
        uiz = ux * tiy - uy * tix
        ujx = uy * tjz - uz * tjy
        ujy = uz * tjx - ux * tjz
        ujz = ux * tjy - uy * tjx
        cx = piy * pjz - piz * pjy
        cy = piz * pjx - pix * pjz
        cz = pix * pjy - piy * pjx
        tau = ux * cx + uy * cy + uz * cz

        # measure rates for damping
        vrx = vel[j, 0] - vel[i, 0]
        vry = vel[j, 1] - vel[i, 1]
        vrz = vel[j, 2] - vel[i, 2]
        vdotr = ux * vrx + uy * vry + uz * vrz
        # chord direction rate
        rdx = (vrx - vdotr * ux) * inv
        rdy = (vry - vdotr * uy) * inv
        rdz = (vrz - vdotr * uz) * inv
        wix = angvel[i, 0]; wiy = angvel[i, 1]; wiz = angvel[i, 2]
        wjx = angvel[j, 0]; wjy = angvel[j, 1]; wjz = angvel[j, 2]
        # d/dt t = omega x t
        tidx = wiy * tiz - wiz * tiy
        tidy = wiz * tix - wix * tiz
        tidz = wix * tiy - wiy * tix
        tjdx = wjy * tjz - wjz * tjy
        tjdy = wjz * tjx - wjx * tjz
        tjdz = wjx * tjy - wjy * tjx
        uidx = rdy * tiz - rdz * tiy + uy * tidz - uz * tidy
        uidy = rdz * tix - rdx * tiz + uz * tidx - ux * tidz
        uidz = rdx * tiy - rdy * tix + ux * tidy - uy * tidx
        ujdx = rdy * tjz - rdz * tjy + uy * tjdz - uz * tjdy
        ujdy = rdz * tjx - rdx * tjz + uz * tjdx - ux * tjdz
        ujdz = rdx * tjy - rdy * tjx + ux * tjdy - uy * tjdx
        pidx = wiy * piz - wiz * piy
        pidy = wiz * pix - wix * piz
        pidz = wix * piy - wiy * pix
        pjdx = wjy * pjz - wjz * pjy
        pjdy = wjz * pjx - wjx * pjz
        pjdz = wjx * pjy - wjy * pjx
        cdx = pidy * pjz - pidz * pjy + piy * pjdz - piz * pjdy
        cdy = pidz * pjx - pidx * pjz + piz * pjdx - pix * pjdz
        cdz = pidx * pjy - pidy * pjx + pix * pjdy - piy * pjdx
        taud = rdx * cx + rdy * cy + rdz * cz + ux * cdx + uy * cdy + uz * cdz

        # generalized stresses (elastic + damping)
        sig = b_kax[b] * eps + b_dax[b] * vdotr
        cb = b_cb[b]; dcb = b_dcb[b]
        gix = cb * (4.0 * uix + 2.0 * ujx) + dcb * (4.0 * uidx + 2.0 * ujdx)
        giy = cb * (4.0 * uiy + 2.0 * ujy) + dcb * (4.0 * uidy + 2.0 * ujdy)
        giz = cb * (4.0 * uiz + 2.0 * ujz) + dcb * (4.0 * uidz + 2.0 * ujdz)
        gjx = cb * (4.0 * ujx + 2.0 * uix) + dcb * (4.0 * ujdx + 2.0 * uidx)
        gjy = cb * (4.0 * ujy + 2.0 * uiy) + dcb * (4.0 * ujdy + 2.0 * uidy)
        gjz = cb * (4.0 * ujz + 2.0 * uiz) + dcb * (4.0 * ujdz + 2.0 * uidz)
        sigt = b_kt[b] * tau + b_dkt[b] * taud

        # force: sig * rhat + P(t_i x g_i + t_j x g_j + sigt * c) / ell
        wx = tiy * giz - tiz * giy + tjy * gjz - tjz * gjy + sigt * cx
        wy = tiz * gix - tix * giz + tjz * gjx - tjx * gjz + sigt * cy
        wz = tix * giy - tiy * gix + tjx * gjy - tjy * gjx + sigt * cz
        wdot = wx * ux + wy * uy + wz * uz
        fx = sig * ux + (wx - wdot * ux) * inv
        fy = sig * uy + (wy - wdot * uy) * inv
        fz = sig * uz + (wz - wdot * uz) * inv
        force[i, 0] += fx; force[i, 1] += fy; force[i, 2] += fz
        force[j, 0] -= fx; force[j, 1] -= fy; force[j, 2] -= fz

        # torque on i: -(g_i (t_i.rhat) - rhat (t_i.g_i)) - sigt (p_j (p_i.rhat) - rhat (p_i.p_j))
        tdotr = tix * ux + tiy * uy + tiz * uz
        tdotg = tix * gix + tiy * giy + tiz * giz
        pdotr = pix * ux + piy * uy + piz * uz
        pdotp = pix * pjx + piy * pjy + piz * pjz
        torque[i, 0] -= gix * tdotr - ux * tdotg + sigt * (pjx * pdotr - ux * pdotp)
        torque[i, 1] -= giy * tdotr - uy * tdotg + sigt * (pjy * pdotr - uy * pdotp)
        torque[i, 2] -= giz * tdotr - uz * tdotg + sigt * (pjz * pdotr - uz * pdotp)
        # torque on j, torsion part: -sigt (rhat (p_i.p_j) - p_i (p_j.rhat))
        tdotr_j = tjx * ux + tjy * uy + tjz * uz
        tdotg_j = tjx * gjx + tjy * gjy + tjz * gjz
        pjdotr = pjx * ux + pjy * uy + pjz * uz
        torque[j, 0] -= gjx * tdotr_j - ux * tdotg_j + sigt * (ux * pdotp - pix * pjdotr)
        torque[j, 1] -= gjy * tdotr_j - uy * tdotg_j + sigt * (uy * pdotp - piy * pjdotr)
        torque[j, 2] -= gjz * tdotr_j - uz * tdotg_j + sigt * (uz * pdotp - piz * pjdotr)


@njit(cache=True)
def elastic_energy(pos, rmat, scale, b_i, b_j, b_axis, b_len0, b_kax, b_cb, b_kt):
    """Total beam strain energy; `beam_forces` is its exact negative gradient."""
    total = 0.0
    nb = b_i.shape[0]
    for b in range(nb):
        i = b_i[b]; j = b_j[b]; a = b_axis[b]
        a2 = (a + 1) % 3
        rx = pos[j, 0] - pos[i, 0]
        ry = pos[j, 1] - pos[i, 1]
        rz = pos[j, 2] - pos[i, 2]
        ell = np.sqrt(rx * rx + ry * ry + rz * rz)
        inv = 1.0 / ell
        ux = rx * inv; uy = ry * inv; uz = rz * inv
        tix = rmat[i, 0, a]; tiy = rmat[i, 1, a]; tiz = rmat[i, 2, a]
        tjx = rmat[j, 0, a]; tjy = rmat[j, 1, a]; tjz = rmat[j, 2, a]
        pix = rmat[i, 0, a2]; piy = rmat[i, 1, a2]; piz = rmat[i, 2, a2]
        pjx = rmat[j, 0, a2]; pjy = rmat[j, 1, a2]; pjz = rmat[j, 2, a2]
        rest = b_len0[b] * 0.5 * (scale[i] + scale[j])
        eps = ell - rest
        uix = uy * tiz - uz * tiy
        uiy = uz * tix - ux * tiz
        uiz = ux * tiy - uy * tix
        ujx = uy * tjz - uz * tjy
        ujy = uz * tjx - ux * tjz
        ujz = ux * tjy - uy * tjx
        cx = piy * pjz - piz * pjy
        cy = piz * pjx - pix * pjz
        cz = pix * pjy - piy * pjx
        tau = ux * cx + uy * cy + uz * cz
        ui2 = uix * uix + uiy * uiy + uiz * uiz
        uj2 = ujx * ujx + ujy * ujy + ujz * ujz
        uij = uix * ujx + uiy * ujy + uiz * ujz
        total += 0.5 * b_kax[b] * eps * eps
        total += b_cb[b] * (2.0 * ui2 + 2.0 * uij + 2.0 * uj2)
        total += 0.5 * b_kt[b] * tau * tau
    return total


@njit(cache=True)
def kinetic_energy(vel, angvel, mass, inertia):
    total = 0.0
    for m in range(vel.shape[0]):
        v2 = vel[m, 0] ** 2 + vel[m, 1] ** 2 + vel[m, 2] ** 2
        w2 = angvel[m, 0] ** 2 + angvel[m, 1] ** 2 + angvel[m, 2] ** 2
        total += 0.5 * mass[m] * v2 + 0.5 * inertia[m] * w2
    return total


@njit(cache=True)
def ground_forces(pos, vel, force, radius, k_contact, c_contact,
                  mu_static, mu_kinetic, slip_speed):
    """Penalty ground plane at z = 0 with Coulomb friction.

    Must run after every other force: the static branch opposes the
    tangential force already accumulated on the mass.
    """
    n = pos.shape[0]
    for m in range(n):
        pen = radius - pos[m, 2]
        if pen <= 0.0:
            continue
        normal = k_contact * pen - c_contact * vel[m, 2]
        if normal < 0.0:
            normal = 0.0
        vx = vel[m, 0]; vy = vel[m, 1]
        vt = np.sqrt(vx * vx + vy * vy)
        if vt < slip_speed:
            fx = force[m, 0]; fy = force[m, 1]
            fmag = np.sqrt(fx * fx + fy * fy)
            if fmag <= mu_static * normal:
                force[m, 0] -= fx
                force[m, 1] -= fy
            elif fmag > 0.0:
                k = mu_kinetic * normal / fmag
                force[m, 0] -= k * fx
                force[m, 1] -= k * fy
        else:
            k = mu_kinetic * normal / vt
            force[m, 0] -= k * vx
            force[m, 1] -= k * vy
        force[m, 2] += normal


@njit(cache=True)
def pair_contact_forces(pos, vel, force, cand_i, cand_j, n_cand,
                        contact_dist, k_contact, c_contact, mu_kinetic, slip_speed):
    """Sphere-sphere penalty push-apart plus kinetic friction for close pairs."""
    for c in range(n_cand):
        i = cand_i[c]; j = cand_j[c]
        dx = pos[j, 0] - pos[i, 0]
        dy = pos[j, 1] - pos[i, 1]
        dz = pos[j, 2] - pos[i, 2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist >= contact_dist or dist < 1.0e-12:
            continue
        inv = 1.0 / dist
        nx = dx * inv; ny = dy * inv; nz = dz * inv
        vrx = vel[j, 0] - vel[i, 0]
        vry = vel[j, 1] - vel[i, 1]
        vrz = vel[j, 2] - vel[i, 2]
        vn = vrx * nx + vry * ny + vrz * nz
        normal = k_contact * (contact_dist - dist) - c_contact * vn
        if normal < 0.0:
            normal = 0.0
        force[j, 0] += normal * nx; force[j, 1] += normal * ny; force[j, 2] += normal * nz
        force[i, 0] -= normal * nx; force[i, 1] -= normal * ny; force[i, 2] -= normal * nz
        tx = vrx - vn * nx; ty = vry - vn * ny; tz = vrz - vn * nz
        vt = np.sqrt(tx * tx + ty * ty + tz * tz)
        if vt > slip_speed:
            k = mu_kinetic * normal / vt
            force[j, 0] -= k * tx; force[j, 1] -= k * ty; force[j, 2] -= k * tz
            force[i, 0] += k * tx; force[i, 1] += k * ty; force[i, 2] += k * tz


@njit(cache=True)
def _interleave_bits(v):
    """Spread the low 21 bits of v so they occupy every third bit."""
    x = np.uint64(v)
    x &= np.uint64(0x1FFFFF)
    x = (x | (x << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    x = (x | (x << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    x = (x | (x << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    x = (x | (x << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    x = (x | (x << np.uint64(2))) & np.uint64(0x1249249249249249)
    return x


@njit(cache=True)
def broad_phase_pairs(points, ids, threshold, bonded_keys, key_stride,
                      out_i, out_j):
    """All id pairs whose points lie strictly closer than `threshold`.

    Points are sorted along a Morton curve and queried through an implicit
    AABB tree built over that order.  Pairs connected in `bonded_keys`
    (sorted array of min_id*key_stride+max_id) are skipped.  Output pairs are
    sorted by (min id, max id).

    Returns (pair_count, visited_nodes); pair_count is -1 when the output
    buffers are too small.
    """
    n = points.shape[0]
    if n < 2:
        return 0, 0
    # quantize to a 1024^3 lattice over the cloud's bounding box
    lo = np.empty(3)
    span = np.empty(3)
    for d in range(3):
        mn = points[0, d]
        mx = points[0, d]
        for k in range(1, n):
            if points[k, d] < mn:
                mn = points[k, d]
            if points[k, d] > mx:
                mx = points[k, d]
        lo[d] = mn
        span[d] = mx - mn if mx > mn else 1.0
    codes = np.empty(n, dtype=np.int64)
    for k in range(n):
        cx = np.uint64(int((points[k, 0] - lo[0]) / span[0] * 1023.0))
        cy = np.uint64(int((points[k, 1] - lo[1]) / span[1] * 1023.0))
        cz = np.uint64(int((points[k, 2] - lo[2]) / span[2] * 1023.0))
        morton = _interleave_bits(cx) | (_interleave_bits(cy) << np.uint64(1)) \
            | (_interleave_bits(cz) << np.uint64(2))
        # salt with the index so sort keys are unique and ordering deterministic
        codes[k] = np.int64(morton << np.uint64(14)) + k
    order = np.argsort(codes)

    size = 1
    while size < n:
        size *= 2
    bmin = np.full((2 * size, 3), np.inf)
    bmax = np.full((2 * size, 3), -np.inf)
    for slot in range(n):
        src = order[slot]
        for d in range(3):
            bmin[size + slot, d] = points[src, d]
            bmax[size + slot, d] = points[src, d]
    for node in range(size - 1, 0, -1):
        left = 2 * node
        right = 2 * node + 1
        for d in range(3):
            bmin[node, d] = min(bmin[left, d], bmin[right, d])
            bmax[node, d] = max(bmax[left, d], bmax[right, d])

    max_pairs = out_i.shape[0]
    count = 0
    visited = 0
    stack = np.empty(2 * size, dtype=np.int64)
    for slot in range(n):
        src = order[slot]
        px = points[src, 0]; py = points[src, 1]; pz = points[src, 2]
        top = 0
        stack[0] = 1
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            visited += 1
            if (px < bmin[node, 0] - threshold or px > bmax[node, 0] + threshold or
                    py < bmin[node, 1] - threshold or py > bmax[node, 1] + threshold or
                    pz < bmin[node, 2] - threshold or pz > bmax[node, 2] + threshold):
                continue
            if node >= size:
                other_slot = node - size
                other = order[other_slot]
                gi = ids[src]; gj = ids[other]
                if gj <= gi:
                    continue
                dx = points[other, 0] - px
                dy = points[other, 1] - py
                dz = points[other, 2] - pz
                if dx * dx + dy * dy + dz * dz < threshold * threshold:
                    key = np.int64(gi) * key_stride + np.int64(gj)
                    pos_k = np.searchsorted(bonded_keys, key)
                    if pos_k < bonded_keys.shape[0] and bonded_keys[pos_k] == key:
                        continue
                    if count >= max_pairs:
                        return -1, visited
                    out_i[count] = gi
                    out_j[count] = gj
                    count += 1
            else:
                stack[top] = 2 * node
                stack[top + 1] = 2 * node + 1
                top += 2
    # canonical pair order regardless of traversal details
    if count > 1:
        keys = np.empty(count, dtype=np.int64)
        for k in range(count):
            keys[k] = np.int64(out_i[k]) * key_stride + np.int64(out_j[k])
        perm = np.argsort(keys)
        tmp_i = out_i[:count][perm].copy()
        tmp_j = out_j[:count][perm].copy()
        out_i[:count] = tmp_i
        out_j[:count] = tmp_j
    return count, visited


@njit(cache=True)
def _finite(pos, vel):
    n = pos.shape[0]
    for m in range(n):
        for d in range(3):
            if not np.isfinite(pos[m, d]) or abs(pos[m, d]) > POSITION_LIMIT:
                return False
            if not np.isfinite(vel[m, d]):
                return False
    return True


@njit(cache=True)
def run_steps(pos, vel, quat, angvel, mass, inv_mass, inertia, inv_inertia,
              phase, amp, freq,
              b_i, b_j, b_axis, b_len0, b_kax, b_cb, b_kt, b_dax, b_dcb, b_dkt,
              surface_idx, bonded_keys, key_stride,
              gravity, ground_enabled, contact_radius,
              k_contact, c_contact, mu_static, mu_kinetic, slip_speed,
              voxel_size, coll_margin, coll_interval,
              ext_force,
              dt, global_damp, nsteps, step_count0, t0,
              cand_i, cand_j, n_cand0,
              sample_every, samp_t, samp_com, samp_ke, samp_ee,
              frame_every, frame_pos, frame_quat):
    """Advance the lattice nsteps; returns (status, steps_done, t, n_cand, n_samples, n_frames)."""
    n = pos.shape[0]
    total_mass = 0.0
    for m in range(n):
        total_mass += mass[m]
    rmat = np.empty((n, 3, 3))
    force = np.empty((n, 3))
    torque = np.empty((n, 3))
    scale = np.empty(n)
    surf_pts = np.empty((surface_idx.shape[0], 3))
    n_cand = n_cand0
    n_samples = 0
    n_frames = 0
    t = t0
    contact_dist = voxel_size
    for s in range(nsteps):
        gstep = step_count0 + s
        if gstep % coll_interval == 0:
            if not _finite(pos, vel):
                return STATUS_DIVERGED, s, t, n_cand, n_samples, n_frames
            if surface_idx.shape[0] >= 2:
                for k in range(surface_idx.shape[0]):
                    src = surface_idx[k]
                    surf_pts[k, 0] = pos[src, 0]
                    surf_pts[k, 1] = pos[src, 1]
                    surf_pts[k, 2] = pos[src, 2]
                n_cand, _ = broad_phase_pairs(surf_pts, surface_idx,
                                              voxel_size * coll_margin,
                                              bonded_keys, key_stride,
                                              cand_i, cand_j)
                if n_cand < 0:
                    return STATUS_PAIR_OVERFLOW, s, t, 0, n_samples, n_frames

        rotation_matrices(quat, rmat)
        actuation_scales(phase, amp, freq, t, scale)
        for m in range(n):
            force[m, 0] = ext_force[m, 0]
            force[m, 1] = ext_force[m, 1]
            force[m, 2] = ext_force[m, 2] - gravity * mass[m]
            torque[m, 0] = 0.0
            torque[m, 1] = 0.0
            torque[m, 2] = 0.0
        beam_forces(pos, vel, angvel, rmat, scale,
                    b_i, b_j, b_axis, b_len0, b_kax, b_cb, b_kt,
                    b_dax, b_dcb, b_dkt, force, torque)
        if n_cand > 0:
            pair_contact_forces(pos, vel, force, cand_i, cand_j, n_cand,
                                contact_dist, k_contact, c_contact,
                                mu_kinetic, slip_speed)
        if ground_enabled:
            ground_forces(pos, vel, force, contact_radius, k_contact, c_contact,
                          mu_static, mu_kinetic, slip_speed)

        # leapfrog-style start: the very first kick is a half step so that
        # constant-force trajectories integrate exactly
        kick = 0.5 * dt if gstep == 0 else dt
        for m in range(n):
            vel[m, 0] = (vel[m, 0] + kick * force[m, 0] * inv_mass[m]) * global_damp
            vel[m, 1] = (vel[m, 1] + kick * force[m, 1] * inv_mass[m]) * global_damp
            vel[m, 2] = (vel[m, 2] + kick * force[m, 2] * inv_mass[m]) * global_damp
            angvel[m, 0] = (angvel[m, 0] + kick * torque[m, 0] * inv_inertia[m]) * global_damp
            angvel[m, 1] = (angvel[m, 1] + kick * torque[m, 1] * inv_inertia[m]) * global_damp
            angvel[m, 2] = (angvel[m, 2] + kick * torque[m, 2] * inv_inertia[m]) * global_damp
            pos[m, 0] += dt * vel[m, 0]
            pos[m, 1] += dt * vel[m, 1]
            pos[m, 2] += dt * vel[m, 2]
            wx = angvel[m, 0]; wy = angvel[m, 1]; wz = angvel[m, 2]
            wmag = np.sqrt(wx * wx + wy * wy + wz * wz)
            if wmag > 1.0e-14:
                half = 0.5 * wmag * dt
                cw = np.cos(half)
                sw = np.sin(half) / wmag
                dw = cw; dx = sw * wx; dy = sw * wy; dz = sw * wz
                qw = quat[m, 0]; qx = quat[m, 1]; qy = quat[m, 2]; qz = quat[m, 3]
                nw = dw * qw - dx * qx - dy * qy - dz * qz
                nx = dw * qx + dx * qw + dy * qz - dz * qy
                ny = dw * qy - dx * qz + dy * qw + dz * qx
                nz = dw * qz + dx * qy - dy * qx + dz * qw
                qn = np.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
                quat[m, 0] = nw / qn
                quat[m, 1] = nx / qn
                quat[m, 2] = ny / qn
                quat[m, 3] = nz / qn
        t = t0 + (s + 1) * dt

        if sample_every > 0 and (s + 1) % sample_every == 0 and n_samples < samp_t.shape[0]:
            cx = 0.0; cy = 0.0; cz = 0.0
            for m in range(n):
                cx += mass[m] * pos[m, 0]
                cy += mass[m] * pos[m, 1]
                cz += mass[m] * pos[m, 2]
            samp_t[n_samples] = t
            samp_com[n_samples, 0] = cx / total_mass
            samp_com[n_samples, 1] = cy / total_mass
            samp_com[n_samples, 2] = cz / total_mass
            samp_ke[n_samples] = kinetic_energy(vel, angvel, mass, inertia)
            rotation_matrices(quat, rmat)
            actuation_scales(phase, amp, freq, t, scale)
            samp_ee[n_samples] = elastic_energy(pos, rmat, scale, b_i, b_j, b_axis,
                                                b_len0, b_kax, b_cb, b_kt)
            n_samples += 1
        if frame_every > 0 and (s + 1) % frame_every == 0 and n_frames < frame_pos.shape[0]:
            for m in range(n):
                for d in range(3):
                    frame_pos[n_frames, m, d] = pos[m, d]
                for d in range(4):
                    frame_quat[n_frames, m, d] = quat[m, d]
            n_frames += 1

    if not _finite(pos, vel):
        return STATUS_DIVERGED, nsteps, t, n_cand, n_samples, n_frames
    return STATUS_OK, nsteps, t, n_cand, n_samples, n_frames
