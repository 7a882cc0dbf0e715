"""Regenerate the bundled stand-in spectra (synthetic curves, not library data).

Four smooth reflectance curves loosely shaped like limestone, basalt,
concrete and asphalt over 0.4-14 um. The 200 samples are spaced like a
resampled laboratory library: 170 in 0.4-2.5 um, 30 in 2.5-14 um.

Each curve carries its own distinguishing feature (carbonate dip, visible
hump, blue vs red slope) so that no material sits near the segment joining
two others; otherwise pairwise closeness alone can prefer a wrong simplex.

Usage: python tools/make_standin_spectra.py > src/scmunmix/data/standin_spectra.csv
"""

import sys

import numpy as np

GAIN = 1.73  # overall brightness; limestone peaks near 0.78


def bump(x, center, width, height):
    return height * np.exp(-0.5 * ((x - center) / width) ** 2)


def edge(x, at, width):
    return 1.0 / (1.0 + np.exp(-(x - at) / width))


def wavelengths(b=200):
    n_thermal = round(0.15 * b)
    return np.concatenate([np.linspace(0.4, 2.5, b - n_thermal, endpoint=False),
                           np.linspace(2.5, 14.0, n_thermal)])


def spectra(b=200):
    x = wavelengths(b)
    refl = 1.0 - edge(x, 2.8, 0.25)  # solar-reflective part fades out past ~3 um
    th = 1.0 - refl
    limestone = ((0.42 + 0.06 * (x - 0.4) / 2.1 - bump(x, 2.34, 0.08, 0.15)
                  - bump(x, 0.5, 0.1, 0.05)) * refl
                 + th * (0.06 + bump(x, 6.6, 0.35, 0.14) + bump(x, 11.3, 0.25, 0.10)))
    basalt = ((0.09 + 0.05 * np.exp(-(x - 0.4) / 0.3) - bump(x, 1.0, 0.15, 0.03)) * refl
              + th * (0.05 + bump(x, 9.6, 1.2, 0.3)))
    concrete = ((0.10 + bump(x, 0.75, 0.25, 0.28) + 0.05 * edge(x, 1.0, 0.1)
                 - bump(x, 1.4, 0.05, 0.05) - bump(x, 1.9, 0.08, 0.06)) * refl
                + th * (0.05 + bump(x, 8.8, 0.45, 0.25) + bump(x, 12.6, 0.6, 0.05)))
    asphalt = ((0.03 + 0.30 * edge(x, 1.6, 0.25) - bump(x, 1.73, 0.04, 0.04)
                - bump(x, 2.31, 0.04, 0.05)) * refl
               + th * (0.08 + 0.02 * x / 14))
    out = np.vstack([limestone, basalt, concrete, asphalt])
    return np.clip(GAIN * out, 0.0, 1.0)


if __name__ == "__main__":
    names = ["limestone_standin", "basalt_standin", "concrete_standin", "asphalt_standin"]
    s = spectra()
    w = sys.stdout
    w.write(",".join(names) + "\n")
    for row in s.T:
        w.write(",".join(f"{v:.9g}" for v in row) + "\n")
