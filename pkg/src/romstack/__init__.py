"""Reduced-order-model walking stack for a planar biped.

LIP-family step-to-step models and foot-placement planners, a planar
rigid-body model with point-contact constraints, output embedding, four
whole-body controllers and a hybrid walking simulator.
"""

__version__ = "0.1.0"
