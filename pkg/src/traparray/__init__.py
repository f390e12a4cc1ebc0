"""Planar arrays of addressable point Paul traps.

Modules: ``geometry`` (electrode layouts), ``field`` (gapless-plane
electrostatics), ``metrics`` (pseudopotential, secular frequencies, depth),
``addressing`` (morph sweeps and gate-time estimates), ``dynamics``
(time-domain trajectories), ``resonator`` (RF drive electronics) and ``cli``.
"""
__version__ = "0.1.0"
