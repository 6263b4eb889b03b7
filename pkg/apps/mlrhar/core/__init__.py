"""Core numerics: tensors, simulation, HAR models, estimators, evaluation."""
