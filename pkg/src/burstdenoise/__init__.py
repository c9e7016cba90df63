"""Low-light RAW burst denoising with wavelet-feature contrastive regularization.

The package is self-contained: a small float64 autodiff engine, an
orthonormal Haar front end, a five-stage feature embedding network (Wnet)
pretrained by clean-vs-noisy classification, a parametric low-light noise
synthesizer, a toy five-frame U-shaped burst denoiser, the contrastive
feature losses, PSNR/SSIM metrics, and deterministic training tooling.
"""

__version__ = "0.1.0"
