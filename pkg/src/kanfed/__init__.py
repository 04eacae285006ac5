"""Federated-learning simulator comparing Spline-KAN, RBF-KAN and MLP
classifiers on pathologically partitioned MNIST."""

__version__ = "0.1.0"
