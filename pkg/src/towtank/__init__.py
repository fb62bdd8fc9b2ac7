"""Fully nonlinear potential-flow towing tank: BEM + free-surface DAE."""
__version__ = "0.1.0"
