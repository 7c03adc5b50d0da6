"""Dynamic-to-static LiDAR scan reconstruction at desk scale.

Range-image projection, a paired-run simulator, correspondence pairing,
a small numpy autodiff core, the autoencoder/discriminator/adversarial
training pipeline, point-set metrics and SLAM trajectory metrics.
"""

__version__ = "0.1.0"
