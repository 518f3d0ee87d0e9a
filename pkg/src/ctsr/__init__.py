"""Noise-controlled CT super-resolution with a conditional diffusion model.

Desk-scale toolkit: procedural head phantoms, 2D parallel-beam CT simulation
with correlated HR/LR projection noise, hybrid training corpora with
segmented bone pairs, the conditional DDPM core and U-Net noise predictor,
training/inference orchestration, and the proposed/m1/m2 ablation harness
with ROI noise, Haralick texture distance and PSNR metrics.
"""

__version__ = "0.1.0"
