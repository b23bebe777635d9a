"""Simulated dual-thumb dexterous hand for tabletop cable manipulation.

Subsystems: deformable cable physics (cable), hand kinematics and control
(hand), a task taxonomy catalog (taxonomy), kinesthetic demonstration
record/replay (demos), finite-state sequencing of demonstrated primitives
(fsm), randomized evaluation (evaluation), and a headless simulation service
with a network protocol and CLI (scene, simulation, service, cli).
"""

__version__ = "0.1.0"
