"""Uncertainty-driven perturbation training and margin diagnostics.

A small laboratory for training tiny ReLU classifiers with perturbed
objectives (FGSM, R-FGSM, loss-driven PGD, entropy-driven PGD, TRADES- and
UDPR-style regularizers), measuring decision-boundary margins and
oscillations, and simulating the scalar boundary dynamics that make
entropy-driven perturbations contract toward the max-margin classifier.
"""

__version__ = "0.1.0"
