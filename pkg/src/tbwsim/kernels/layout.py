"""Slot indices of the plant state and parameter vectors shared by both kernels.

Keep in sync with ``_plant_ext.pyx``.
"""

# state
S_MOTOR_DEG = 0
S_SHAFT_DEG = 1
S_RPM = 2
S_ACCUM = 3
S_COMMANDED = 4
S_EXECUTED = 5
S_LOST = 6
S_STALLED = 7
S_DVAC = 8
S_LOAD = 9
S_AVAIL = 10
N_STATE = 11

# parameters
P_DT = 0
P_FREQ = 1
P_ENERGIZED = 2
P_MOTOR_OK = 3
P_BELT_OK = 4
P_IGNITION = 5
P_RATIO = 6
P_USTEP_DEG = 7
P_VALVE_MIN = 8
P_VALVE_MAX = 9
P_FRICTION = 10
P_DVAC_CAP = 11
P_RPM_IDLE = 12
P_RPM_MAX = 13
P_ENGINE_ALPHA = 14
P_STICTION = 15
P_DRIFT_GAIN = 16
P_T_HOLD = 17
P_T_CORNER = 18
P_T_SHAPE = 19
P_LOAD_EXTRA = 20
P_DETENT = 21
N_PARAM = 22

SHAPE_LINEAR = 0.0
SHAPE_HYPERBOLIC = 1.0
