"""Pure-Python plant integrator. Reference for the compiled kernel; both must
produce bit-identical state for identical inputs."""

import math


def available_torque(speed, t_hold, t_corner, shape):
    if speed <= t_corner:
        return t_hold
    if shape == 0.0:
        t = t_hold * (2.0 - speed / t_corner)
        return t if t > 0.0 else 0.0
    return t_hold * t_corner / speed


def advance_plant(S, P, n_steps):
    """Advance the motor/belt/valve/engine state ``n_steps`` fixed substeps."""
    motor = S[0]
    shaft = S[1]
    rpm = S[2]
    accum = S[3]
    commanded = S[4]
    executed = S[5]
    lost = S[6]
    stalled = S[7]
    dvac = S[8]
    load = S[9]
    avail = S[10]

    dt = P[0]
    freq = P[1]
    energized = P[2] != 0.0
    motor_ok = P[3] != 0.0
    belt_ok = P[4] != 0.0
    ignition = P[5] != 0.0
    ratio = P[6]
    ustep = P[7]
    vmin = P[8]
    vmax = P[9]
    friction = P[10]
    dvac_cap = P[11]
    rpm_idle = P[12]
    rpm_max = P[13]
    alpha = P[14]
    stiction = P[15]
    drift_gain = P[16]
    t_hold = P[17]
    t_corner = P[18]
    shape = P[19]
    extra = P[20]
    detent = P[21]

    holding = energized and motor_ok and belt_ok
    speed = abs(freq) * ustep
    if motor_ok:
        avail = available_torque(speed, t_hold, t_corner, shape)
    else:
        avail = 0.0
    mot_min = vmin * ratio
    mot_max = vmax * ratio
    # a de-energized motor still resists through its detent torque
    resist = stiction + (detent * ratio if belt_ok else 0.0)

    for _ in range(n_steps):
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
            n = math.trunc(accum)
            accum -= n
            if n != 0:
                commanded += n
                if belt_ok:
                    if n > 0:
                        load = (friction + dvac) / ratio + extra
                    else:
                        load = friction / ratio + extra
                else:
                    load = extra
                if load > avail:
                    lost += abs(n)
                elif belt_ok:
                    if n > 0:
                        room = math.floor((mot_max - motor) / ustep + 1e-9)
                        fit = n if n <= room else (room if room > 0 else 0)
                    else:
                        room = math.floor((motor - mot_min) / ustep + 1e-9)
                        fit = n if -n <= room else (-room if room > 0 else 0)
                    stalled += abs(n - fit)
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
