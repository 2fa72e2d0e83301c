"""biomuse: bio-adaptive pentatonic music pipeline.

Simulated radar phase signals are demodulated into heart/respiration
rates, discretized into symbolic user states, planned into musical
parameters by a rule agent, rendered as mode-constrained melodies and
synthesized to 44.1 kHz audio. A session loop and WebSocket service tie
the stages into a closed feedback loop.
"""

__version__ = "0.1.0"
