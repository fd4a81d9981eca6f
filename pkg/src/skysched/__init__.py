"""skysched: a desk-scale lab for UAV-assisted vehicular network scheduling.

Channel physics with delayed CSI, rotary-wing propulsion energy, a Lyapunov
virtual-queue controller, and a diffusion-policy reinforcement learner with
baselines, driven by a seeded experiment CLI.
"""

__version__ = "0.1.0"
