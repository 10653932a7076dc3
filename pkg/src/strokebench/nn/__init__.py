from . import gradcheck, layers, ops, optim, rng

__all__ = ["gradcheck", "layers", "ops", "optim", "rng"]
