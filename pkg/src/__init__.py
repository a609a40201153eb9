"""
neurodiff

Differential testing of small neural networks: gradient-guided generation
of difference-inducing inputs under neuron-coverage guidance.
"""

__version__ = "1.0.0"
