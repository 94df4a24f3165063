"""Deterministic discrete-event simulator of a low-cost two-wheeler
throttle-by-wire system: redundant AMR throttle position sensor ECU, CAN
segment, stepper-driven throttle valve actuator ECU and its plant."""

__version__ = "0.1.0"
