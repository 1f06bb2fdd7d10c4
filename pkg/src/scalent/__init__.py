"""Asymptotic dynamics of metrics on finite measure spaces.

Kantorovich distances, epsilon-entropy, iterated metrics under
measure-preserving maps and along filtrations, and classification of the
resulting entropy growth.
"""

__version__ = "0.1.0"
