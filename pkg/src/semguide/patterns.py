"""Procedural pattern textures, one renderer per label of the default vocabulary.

Every renderer takes ``(size, rng)`` and returns a float32 array of shape
``[3, size, size]`` with values in ``[0, 1]``.  Output is a pure function of
the generator state, so a seeded ``numpy.random.Generator`` makes it
reproducible.
"""
from __future__ import annotations

import colorsys
from typing import Callable

import numpy as np

Renderer = Callable[[int, np.random.Generator], np.ndarray]


def _color(rng: np.random.Generator, sat=(0.4, 1.0), val=(0.35, 1.0)) -> np.ndarray:
    h = rng.random()
    s = rng.uniform(*sat)
    v = rng.uniform(*val)
    return np.array(colorsys.hsv_to_rgb(h, s, v), dtype=np.float32)


def _contrast_pair(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    a = _color(rng, val=(0.75, 1.0))
    b = _color(rng, val=(0.1, 0.45))
    return (a, b) if rng.random() < 0.5 else (b, a)


def _fill(size: int, color: np.ndarray) -> np.ndarray:
    return np.broadcast_to(color[:, None, None], (3, size, size)).astype(np.float32).copy()


def _paint(img: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    img[:, mask] = color[:, None]


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    return yy.astype(np.float32), xx.astype(np.float32)


def smooth_noise(size: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinearly upsampled uniform noise on a ``cells x cells`` lattice, in [0, 1]."""
    lattice = rng.random((cells + 1, cells + 1)).astype(np.float32)
    t = np.linspace(0.0, cells, size, endpoint=False, dtype=np.float32)
    i = np.floor(t).astype(int)
    f = t - i
    rows = lattice[i] * (1 - f)[:, None] + lattice[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def solid(size, rng):
    img = _fill(size, _color(rng, sat=(0.2, 1.0), val=(0.2, 0.95)))
    img += rng.normal(0.0, 0.03, img.shape).astype(np.float32)
    return img


def plaid(size, rng):
    base, c1 = _contrast_pair(rng)
    c2 = _color(rng)
    img = _fill(size, base)
    yy, xx = _grid(size)
    period = rng.uniform(0.2, 0.35) * size
    wide = period * rng.uniform(0.3, 0.45)
    thin = max(1.0, period * 0.08)
    oy, ox = rng.uniform(0, period, 2)
    hb = ((yy + oy) % period) < wide
    vb = ((xx + ox) % period) < wide
    img[:, hb] = 0.5 * img[:, hb] + 0.5 * c1[:, None]
    img[:, vb] = 0.5 * img[:, vb] + 0.5 * c1[:, None]
    hl = np.abs(((yy + oy + period / 2) % period) - wide / 2) < thin / 2
    vl = np.abs(((xx + ox + period / 2) % period) - wide / 2) < thin / 2
    _paint(img, hl | vl, c2)
    return img


def floral(size, rng):
    bg, petal = _contrast_pair(rng)
    core = np.array([0.95, 0.8, 0.15], dtype=np.float32)
    img = _fill(size, bg)
    yy, xx = _grid(size)
    pr = max(1.5, size * rng.uniform(0.045, 0.07))
    n_flowers = int(rng.integers(3, 7))
    for _ in range(n_flowers):
        cy, cx = rng.uniform(0, size, 2)
        rot = rng.uniform(0, 2 * np.pi)
        mask = np.zeros((size, size), dtype=bool)
        for k in range(5):
            a = rot + 2 * np.pi * k / 5
            py, px = cy + 1.6 * pr * np.sin(a), cx + 1.6 * pr * np.cos(a)
            mask |= (yy - py) ** 2 + (xx - px) ** 2 <= pr**2
        _paint(img, mask, petal)
        _paint(img, (yy - cy) ** 2 + (xx - cx) ** 2 <= (0.8 * pr) ** 2, core)
    return img


def stripe(size, rng):
    c0, c1 = _contrast_pair(rng)
    img = _fill(size, c0)
    yy, xx = _grid(size)
    period = rng.uniform(size / 8, size / 4)
    duty = rng.uniform(0.35, 0.6)
    coord = yy if rng.random() < 0.5 else xx
    _paint(img, ((coord + rng.uniform(0, period)) % period) < duty * period, c1)
    return img


def check(size, rng):
    c0, c1 = _contrast_pair(rng)
    img = _fill(size, c0)
    yy, xx = _grid(size)
    q = rng.uniform(size / 10, size / 5)
    oy, ox = rng.uniform(0, q, 2)
    cells = (np.floor((yy + oy) / q) + np.floor((xx + ox) / q)) % 2 == 1
    _paint(img, cells, c1)
    return img


def graphic(size, rng):
    img = _fill(size, _color(rng, sat=(0.0, 0.3), val=(0.7, 1.0)))
    yy, xx = _grid(size)
    for _ in range(int(rng.integers(2, 5))):
        col = _color(rng, sat=(0.7, 1.0), val=(0.5, 1.0))
        kind = rng.integers(0, 3)
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        r = rng.uniform(0.15, 0.35) * size
        if kind == 0:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        elif kind == 1:
            mask = (np.abs(yy - cy) <= r * 0.7) & (np.abs(xx - cx) <= r)
        else:
            mask = (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) <= (yy - cy + r) / 2)
        _paint(img, mask, col)
    return img


def tie_dye(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.2, 0.8, 2) * size
    theta = np.arctan2(yy - cy, xx - cx)
    rad = np.hypot(yy - cy, xx - cx) / size
    arms = int(rng.integers(2, 5))
    twist = rng.uniform(3.0, 8.0)
    hue0 = rng.random()
    wobble = smooth_noise(size, 4, rng) * 0.3
    phase = arms * theta / (2 * np.pi) + twist * rad + wobble
    hue = (hue0 + 0.5 * (np.sin(2 * np.pi * phase) + 1) * 0.6) % 1.0
    sat = 0.55 + 0.4 * np.cos(2 * np.pi * phase) ** 2
    # vectorised HSV -> RGB
    h6 = hue * 6.0
    c = sat * 0.95
    x = c * (1 - np.abs(h6 % 2 - 1))
    m = 0.95 - c
    sector = np.floor(h6).astype(int) % 6
    z = np.zeros_like(c)
    table = [(c, x, z), (x, c, z), (z, c, x), (z, x, c), (x, z, c), (c, z, x)]
    rgb = np.zeros((3, size, size), dtype=np.float32)
    for s, (r, g, b) in enumerate(table):
        sel = sector == s
        rgb[0][sel], rgb[1][sel], rgb[2][sel] = r[sel], g[sel], b[sel]
    return rgb + m


def animal(size, rng):
    yy, xx = _grid(size)
    if rng.random() < 0.6:
        # leopard: dark-rimmed rosettes on tan
        tan = np.array([0.85, 0.62, 0.3], dtype=np.float32) * rng.uniform(0.85, 1.1)
        img = _fill(size, np.clip(tan, 0, 1))
        field = smooth_noise(size, max(3, size // 10), rng)
        _paint(img, field > 0.62, np.array([0.08, 0.05, 0.03], dtype=np.float32))
        _paint(img, field > 0.7, np.array([0.55, 0.35, 0.15], dtype=np.float32))
    else:
        # zebra: warped black/white bands
        img = _fill(size, np.array([0.95, 0.95, 0.92], dtype=np.float32))
        warp = smooth_noise(size, 3, rng) * size * 0.25
        coord = (xx if rng.random() < 0.5 else yy) + warp
        period = rng.uniform(size / 8, size / 5)
        _paint(img, (coord % period) < period * 0.45, np.array([0.05, 0.05, 0.05], dtype=np.float32))
    return img


_GLYPHS = {
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "11001", "10101", "10011", "10001", "10001", "10001"],
    "O": ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "V": ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
}
_GLYPH_ARRAYS = {k: np.array([[c == "1" for c in row] for row in v]) for k, v in _GLYPHS.items()}


def words_letters(size, rng):
    paper, ink = _contrast_pair(rng)
    img = _fill(size, paper)
    scale = max(1, int(round(size * rng.uniform(0.025, 0.045))))
    gh, gw = 7 * scale, 5 * scale
    mask = np.zeros((size, size), dtype=bool)
    keys = sorted(_GLYPH_ARRAYS)
    y = int(rng.integers(0, scale + 1))
    while y + gh <= size:
        x = int(rng.integers(0, scale + 1))
        while x + gw <= size:
            if rng.random() < 0.85:
                g = _GLYPH_ARRAYS[keys[rng.integers(len(keys))]]
                mask[y : y + gh, x : x + gw] |= np.kron(g, np.ones((scale, scale), dtype=bool))
            x += gw + scale
        y += gh + 2 * scale
    _paint(img, mask, ink)
    return img


def dot(size, rng):
    bg, fg = _contrast_pair(rng)
    img = _fill(size, bg)
    yy, xx = _grid(size)
    period = rng.uniform(size / 8, size / 4.5)
    r = period * rng.uniform(0.22, 0.34)
    oy, ox = rng.uniform(0, period, 2)
    dy = (yy + oy) % period - period / 2
    dx = (xx + ox) % period - period / 2
    _paint(img, dy**2 + dx**2 <= r**2, fg)
    return img


def paisley(size, rng):
    bg, fg = _contrast_pair(rng)
    eye = _color(rng)
    img = _fill(size, bg)
    yy, xx = _grid(size)
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.1, 0.9, 2) * size
        R = rng.uniform(0.1, 0.18) * size
        a = rng.uniform(0, 2 * np.pi)
        u = (xx - cx) * np.cos(a) + (yy - cy) * np.sin(a)
        v = -(xx - cx) * np.sin(a) + (yy - cy) * np.cos(a)
        body = u**2 + v**2 <= R**2
        # curved tail leaving the round body
        t = np.clip(u / (2.2 * R), 0.0, 1.0)
        centre = -R * 0.6 * t**2
        half = R * (1 - t) ** 1.5
        tail = (u >= 0) & (u <= 2.2 * R) & (np.abs(v - centre) <= half)
        drop = body | tail
        ring = drop & ~((u + 0.15 * R) ** 2 + v**2 <= (0.55 * R) ** 2)
        _paint(img, ring, fg)
        _paint(img, (u + 0.15 * R) ** 2 + v**2 <= (0.25 * R) ** 2, eye)
    return img


RENDERERS: tuple[Renderer, ...] = (
    solid,
    plaid,
    floral,
    stripe,
    check,
    graphic,
    tie_dye,
    animal,
    words_letters,
    dot,
    paisley,
)
