"""Fuel-cell airpath control toolkit.

Subsystems: third-order airpath plant model and calibration, frequency-domain
analysis (RGA, classical and disk margins), MIMO internal-model control
design, efficiency-optimal set-point maps, maximal admissible sets, reference
governors (load governor, cross-section governor, cascaded chain), and a
fixed-step closed-loop simulation harness with metrics.
"""

__version__ = "0.1.0"
