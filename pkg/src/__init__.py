# Reward denoising under generalized confusion-matrix perturbations
__version__ = "0.2.0"
