"""Desk-scale smart-microfarming continuum.

Subpackages and modules:

- ``lora``      LoRa frame timing and per-link signal sampling
- ``channel``   shared-channel contention simulator (CAD back-off, capture effect)
- ``telemetry`` sensor wire codec, edge store and at-least-once cloud forwarding
- ``ratings``   sparse soil/plant rating matrices and cosine-similarity completion
- ``models``    from-scratch per-plant rating regressors
- ``bench``     model benchmark harness (accuracy / MSE / timing learning curves)
- ``cli``       command-line front end wiring the two workflows together
"""

__version__ = "0.1.0"
