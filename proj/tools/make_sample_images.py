#!/usr/bin/env python3
"""Builds the small bundled image set under data/images from scikit-image's sample data.

Each photo is center-cropped to a square and resized to 256x256 RGB (grayscale
sources are replicated across channels).
"""
import os
import sys

import numpy as np
from PIL import Image
import skimage.data as sd

TRAIN = ["astronaut", "coffee", "rocket", "motorcycle_left", "retina",
         "camera", "coins", "brick", "grass", "page"]
TEST = ["chelsea", "motorcycle_right", "immunohistochemistry", "moon",
        "gravel", "clock"]
SIZE = 256


def load(name):
    if name.startswith("motorcycle_"):
        img = sd.stereo_motorcycle()[0 if name.endswith("left") else 1]
    else:
        img = getattr(sd, name)()
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[..., :3]
    if img.dtype != np.uint8:
        img = (255 * (img - img.min()) / max(1e-9, np.ptp(img))).astype(np.uint8)
    return img


def square(img):
    h, w = img.shape[:2]
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    return img[y0:y0 + s, x0:x0 + s]


def main(root):
    for subset, names in (("train", TRAIN), ("test", TEST)):
        out = os.path.join(root, subset)
        os.makedirs(out, exist_ok=True)
        for name in names:
            im = Image.fromarray(square(load(name))).resize((SIZE, SIZE), Image.LANCZOS)
            im.save(os.path.join(out, name + ".png"), optimize=True)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "images"))
