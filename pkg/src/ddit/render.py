"""Latent rendering for eyeballing results.

Latents have several channels and no decoder exists, so images show
channel 0 min-max normalized to 8 bits. PGM (binary P5) is always
available; PNG is used when the filename asks for it and Pillow is
importable.
"""

import numpy as np

from .errors import ValidationError


def to_gray(latent, channel=0):
    latent = np.asarray(latent)
    if latent.ndim != 3 or channel >= latent.shape[2]:
        raise ValidationError(f"cannot render channel {channel} of shape {latent.shape}")
    plane = latent[:, :, channel].astype(np.float64)
    lo, hi = plane.min(), plane.max()
    if hi - lo < 1e-12:
        return np.zeros(plane.shape, dtype=np.uint8)
    return np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(latent, path, channel=0):
    gray = to_gray(latent, channel)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_image(latent, path, channel=0):
    """Dispatch on extension: .png via Pillow when present, else PGM."""
    if str(path).lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError:
            raise ValidationError(
                "PNG output requires Pillow; use a .pgm filename instead"
            )
        Image.fromarray(to_gray(latent, channel), mode="L").save(path)
    else:
        write_pgm(latent, path, channel)
