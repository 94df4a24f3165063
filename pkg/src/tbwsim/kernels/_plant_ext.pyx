# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled plant integrator. Mirrors ``_plant_py.advance_plant`` operation for
operation so both backends give bit-identical results."""

from libc.math cimport floor, trunc, fabs


cdef inline double available_torque(double speed, double t_hold, double t_corner,
                                    double shape) nogil:
    cdef double t
    if speed <= t_corner:
        return t_hold
    if shape == 0.0:
        t = t_hold * (2.0 - speed / t_corner)
        return t if t > 0.0 else 0.0
    return t_hold * t_corner / speed


def advance_plant(double[::1] S, const double[::1] P, long n_steps):
    cdef double motor = S[0]
    cdef double shaft = S[1]
    cdef double rpm = S[2]
    cdef double accum = S[3]
    cdef double commanded = S[4]
    cdef double executed = S[5]
    cdef double lost = S[6]
    cdef double stalled = S[7]
    cdef double dvac = S[8]
    cdef double load = S[9]
    cdef double avail = S[10]

    cdef double dt = P[0]
    cdef double freq = P[1]
    cdef bint energized = P[2] != 0.0
    cdef bint motor_ok = P[3] != 0.0
    cdef bint belt_ok = P[4] != 0.0
    cdef bint ignition = P[5] != 0.0
    cdef double ratio = P[6]
    cdef double ustep = P[7]
    cdef double vmin = P[8]
    cdef double vmax = P[9]
    cdef double friction = P[10]
    cdef double dvac_cap = P[11]
    cdef double rpm_idle = P[12]
    cdef double rpm_max = P[13]
    cdef double alpha = P[14]
    cdef double stiction = P[15]
    cdef double drift_gain = P[16]
    cdef double t_hold = P[17]
    cdef double t_corner = P[18]
    cdef double shape = P[19]
    cdef double extra = P[20]
    cdef double detent = P[21]

    cdef bint holding = energized and motor_ok and belt_ok
    cdef double speed = fabs(freq) * ustep
    cdef double mot_min = vmin * ratio
    cdef double mot_max = vmax * ratio
    # a de-energized motor still resists through its detent torque
    cdef double resist = stiction + (detent * ratio if belt_ok else 0.0)
    cdef double target, r, n, room, fit
    cdef long i

    if motor_ok:
        avail = available_torque(speed, t_hold, t_corner, shape)
    else:
        avail = 0.0

    with nogil:
        for i in range(n_steps):
            if ignition:
                target = rpm_idle + (rpm_max - rpm_idle) * (shaft / vmax)
            else:
                target = 0.0
            rpm += (target - rpm) * alpha
            r = rpm / rpm_max
            dvac = dvac_cap * r * r
            if dvac > dvac_cap:
                dvac = dvac_cap

            if energized:
                accum += freq * dt
                n = trunc(accum)
                accum -= n
                if n != 0.0:
                    commanded += n
                    if belt_ok:
                        if n > 0.0:
                            load = (friction + dvac) / ratio + extra
                        else:
                            load = friction / ratio + extra
                    else:
                        load = extra
                    if load > avail:
                        lost += fabs(n)
                    elif belt_ok:
                        if n > 0.0:
                            room = floor((mot_max - motor) / ustep + 1e-9)
                            if n <= room:
                                fit = n
                            elif room > 0.0:
                                fit = room
                            else:
                                fit = 0.0
                        else:
                            room = floor((motor - mot_min) / ustep + 1e-9)
                            if -n <= room:
                                fit = n
                            elif room > 0.0:
                                fit = -room
                            else:
                                fit = 0.0
                        stalled += fabs(n - fit)
                        executed += fit
                        motor += fit * ustep
                        shaft = motor / ratio
                    else:
                        executed += n
                        motor += n * ustep

            if not holding and dvac > resist and shaft > vmin:
                shaft -= drift_gain * (dvac - resist) * dt
                if shaft < vmin:
                    shaft = vmin
                if belt_ok:
                    motor = shaft * ratio

    S[0] = motor
    S[1] = shaft
    S[2] = rpm
    S[3] = accum
    S[4] = commanded
    S[5] = executed
    S[6] = lost
    S[7] = stalled
    S[8] = dvac
    S[9] = load
    S[10] = avail
