"""crane_sim: desk-scale simulation of an 8-DoF CT-guided needle robot.

Subsystems: serial-chain kinematics, capsule collision scene, fiducial
registration, redundancy-resolved planning, a simulated 1 kHz joint
controller with safety interlocks and an SMA inchworm needle driver, a
framed binary wire protocol, and the operator-facing teleoperation service.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
