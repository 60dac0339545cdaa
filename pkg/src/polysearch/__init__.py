"""Genetic search for class-specific image augmentation policies."""
