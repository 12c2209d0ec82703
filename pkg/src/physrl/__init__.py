"""Verifiable rewards, intuitive-physics task generation, MCQ evaluation and a
simulated GRPO post-training loop for physical-reasoning models."""

__version__ = "0.1.0"
