"""Numeric kernel backend selection.

The hot inner loops (FK frame evaluation, capsule clearance queries, the
1 kHz joint control tick) exist twice: a Cython extension (_ckernels) and a
pure-Python reference (pure).  The compiled backend is used when it imported
successfully; set CRANE_SIM_KERNELS=pure|compiled to force a choice.
Both produce bit-identical results (same arithmetic, same order).
"""

import os

from . import pure as _pure

_choice = os.environ.get("CRANE_SIM_KERNELS", "auto")
if _choice not in ("auto", "pure", "compiled"):
    raise ValueError(f"CRANE_SIM_KERNELS must be auto|pure|compiled, got {_choice!r}")

if _choice == "pure":
    _impl = _pure
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _pure

BACKEND = _impl.BACKEND_NAME

chain_frames = _impl.chain_frames
seg_seg_distance = _impl.seg_seg_distance
min_clearance = _impl.min_clearance
joint_tick = _impl.joint_tick

# Frame buffer layout (shared by both backends).
F_CARRIAGE = _pure.F_CARRIAGE
F_MOUNT = _pure.F_MOUNT
F_ELBOW1 = _pure.F_ELBOW1
F_ELBOW2 = _pure.F_ELBOW2
F_ARMEND = _pure.F_ARMEND
F_HUB = _pure.F_HUB
F_TIP = _pure.F_TIP
F_AXIS5 = _pure.F_AXIS5
F_AXIS6 = _pure.F_AXIS6
F_AXIS7 = _pure.F_AXIS7
F_NEEDLE = _pure.F_NEEDLE
FRAMES_LEN = _pure.FRAMES_LEN
N_LINK_CAPSULES = _pure.N_LINK_CAPSULES


def backends():
    """Names of the importable backends (for the benchmark and tests)."""
    out = {"pure": _pure}
    try:
        from . import _ckernels
        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out
