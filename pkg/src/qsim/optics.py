"""Modulator field synthesis, Fourier-plane propagation and detector model.

The modulator plane is a grid of pixels.  Spins live in square blocks of
``block_size`` pixels inside up to three rectangular sections: section 1
takes phase {0, pi} (amplitude xi), section 2 phase theta_l + {0, pi}
(amplitude eta) and section 3 the fixed phase pi (amplitude sigma).

The lens is modelled as an unnormalised, zero-padded 2-D DFT.  The centre
pixel of the Fourier plane is then ``|sum of all pixel values|^2``, i.e. the
analytic centre intensity times ``block_area**2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import FIXED_PHASE_FACTOR, IntensityProfile, Knobs, spin_coefficients, fixed_field
from .errors import ConfigurationError
from .lattice import RelationMatrix


@dataclass(frozen=True)
class Section:
    """Rectangle of ``block_rows x block_cols`` spin blocks with its top-left pixel at (row, col)."""

    row: int
    col: int
    block_rows: int
    block_cols: int

    @property
    def capacity(self) -> int:
        return self.block_rows * self.block_cols

    def pixel_bounds(self, block_size: int):
        return (self.row, self.col,
                self.row + self.block_rows * block_size,
                self.col + self.block_cols * block_size)


@dataclass(frozen=True)
class OpticsConfig:
    grid_height: int
    grid_width: int
    block_size: int
    sections: tuple
    pad_factor: int = 2
    pixel_pitch: float = 8e-6
    # metadata only; the DFT model is scale-free
    wavelength: float = 632.8e-9
    focal_length: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        if self.block_size < 1:
            raise ConfigurationError("block_size must be >= 1")
        if not 1 <= len(self.sections) <= 3:
            raise ConfigurationError("between one and three sections are supported")
        if self.pad_factor < 1:
            raise ConfigurationError("pad_factor must be >= 1")
        rects = [s.pixel_bounds(self.block_size) for s in self.sections]
        for r0, c0, r1, c1 in rects:
            if r0 < 0 or c0 < 0 or r1 > self.grid_height or c1 > self.grid_width:
                raise ConfigurationError(f"section {(r0, c0, r1, c1)} does not fit in the grid")
        for i in range(len(rects)):
            for j in range(i + 1, len(rects)):
                a, b = rects[i], rects[j]
                if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                    raise ConfigurationError(f"sections {i + 1} and {j + 1} overlap")

    @classmethod
    def for_spins(cls, n: int, n_fixed: int = 0, block_size: int = 30,
                  margin: int = 0, pad_factor: int = 2, **meta) -> "OpticsConfig":
        """Near-square block grids for each section, placed side by side.

        ``margin`` leaves unmodulated pixels around the modulated area, which
        positive misalignment needs.
        """
        cols = math.ceil(math.sqrt(n))
        rows = math.ceil(n / cols)
        sections = [Section(margin, margin, rows, cols),
                    Section(margin, margin + cols * block_size, rows, cols)]
        height, width = rows, 2 * cols
        if n_fixed:
            fc = math.ceil(math.sqrt(n_fixed))
            fr = math.ceil(n_fixed / fc)
            sections.append(Section(margin, margin + width * block_size, fr, fc))
            height, width = max(height, fr), width + fc
        return cls(height * block_size + 2 * margin, width * block_size + 2 * margin,
                   block_size, tuple(sections), pad_factor, **meta)

    @property
    def block_area(self) -> int:
        return self.block_size ** 2

    @property
    def padded_shape(self):
        return self.grid_height * self.pad_factor, self.grid_width * self.pad_factor

    @property
    def modulated_area(self):
        """Bounding box ``(r0, c0, r1, c1)`` of all sections."""
        rects = [s.pixel_bounds(self.block_size) for s in self.sections]
        return (min(r[0] for r in rects), min(r[1] for r in rects),
                max(r[2] for r in rects), max(r[3] for r in rects))

    def check_capacity(self, n: int, n_fixed: int) -> None:
        if n > self.sections[0].capacity:
            raise ConfigurationError(f"{n} spins do not fit in section 1 ({self.sections[0].capacity} blocks)")
        if len(self.sections) > 1 and n > self.sections[1].capacity:
            raise ConfigurationError(f"{n} spins do not fit in section 2 ({self.sections[1].capacity} blocks)")
        if n_fixed and (len(self.sections) < 3 or n_fixed > self.sections[2].capacity):
            raise ConfigurationError(f"{n_fixed} fixed spins need a third section of that capacity")


@dataclass(frozen=True)
class Misalignment:
    """Signed spot/aperture mismatch in pixels: negative shrinks the spot, positive spills over."""

    pixels: int = 0

    def check(self, cfg: OpticsConfig) -> None:
        r0, c0, r1, c1 = cfg.modulated_area
        m = self.pixels
        if m < 0 and (-m > r1 - r0 or -m > c1 - c0):
            raise ConfigurationError(f"misalignment {m} exceeds the modulated area")
        if m > 0 and (r0 < m or c0 < m or r1 + m > cfg.grid_height or c1 + m > cfg.grid_width):
            raise ConfigurationError(f"misalignment {m} needs a margin of at least {m} pixels")


def _place_blocks(field, section: Section, values, block_size: int):
    grid = np.zeros(section.capacity, dtype=complex)
    grid[: len(values)] = values
    grid = grid.reshape(section.block_rows, section.block_cols)
    r0, c0, r1, c1 = section.pixel_bounds(block_size)
    field[r0:r1, c0:c1] = np.repeat(np.repeat(grid, block_size, axis=0), block_size, axis=1)


def _apply_misalignment(field, cfg: OpticsConfig, mis: Misalignment):
    m = mis.pixels
    if m == 0:
        return field
    mis.check(cfg)
    r0, c0, r1, c1 = cfg.modulated_area
    if m < 0:
        k = -m
        field[r1 - k:r1, c0:c1] = 0
        field[r0:r1, c1 - k:c1] = 0
        return field
    amp = np.abs(field[r0:r1, c0:c1])
    spill = np.pad(amp, m, mode="edge").astype(complex)
    spill[m:-m, m:-m] = field[r0:r1, c0:c1]
    field[r0 - m:r1 + m, c0 - m:c1 + m] = spill
    return field


def synthesize_field(x, A: RelationMatrix, intensities: IntensityProfile,
                     cfg: OpticsConfig, mis: Misalignment | None = None) -> np.ndarray:
    """Complex modulator-plane field for spin configuration ``x``.

    Raises
    ------
    ConfigurationError
        If the spins or fixed spins do not fit the section layout.
    """
    x = np.asarray(x, dtype=float)
    n = intensities.n
    if x.shape != (n,):
        raise ValueError("spin vector does not match intensity profile")
    cfg.check_capacity(n, intensities.n_fixed)
    if len(cfg.sections) == 1 and np.any(intensities.eta):
        raise ConfigurationError("non-zero eta needs a second section")
    field = np.zeros((cfg.grid_height, cfg.grid_width), dtype=complex)
    bs = cfg.block_size
    _place_blocks(field, cfg.sections[0], intensities.xi * x, bs)
    if len(cfg.sections) > 1:
        _place_blocks(field, cfg.sections[1], A.entries * intensities.eta * x, bs)
    if intensities.n_fixed:
        _place_blocks(field, cfg.sections[2], FIXED_PHASE_FACTOR * intensities.sigma * intensities.z, bs)
    return _apply_misalignment(field, cfg, mis or Misalignment(0))


def propagate(field: np.ndarray, pad_factor: int = 2) -> np.ndarray:
    """Fourier-plane intensity, shifted so the DC term sits at ``center_index``."""
    H, W = field.shape
    spectrum = np.fft.fft2(field, s=(H * pad_factor, W * pad_factor))
    return np.abs(np.fft.fftshift(spectrum)) ** 2


def center_index(shape):
    return shape[0] // 2, shape[1] // 2


def dft_window_matrices(height: int, width: int, pad_factor: int, radius: int):
    """Row/column kernels so that ``Er @ f @ Ec`` is the DFT on frequencies ``-radius..radius``."""
    p = np.arange(-radius, radius + 1)
    P, Q = height * pad_factor, width * pad_factor
    Er = np.exp(-2j * np.pi * np.outer(p, np.arange(height)) / P)
    Ec = np.exp(-2j * np.pi * np.outer(np.arange(width), p) / Q)
    return Er, Ec


def propagate_window(field: np.ndarray, pad_factor: int = 2, radius: int = 0) -> np.ndarray:
    """The ``(2r+1) x (2r+1)`` centre window of :func:`propagate`, computed directly."""
    Er, Ec = dft_window_matrices(*field.shape, pad_factor, radius)
    return np.abs(Er @ field @ Ec) ** 2


def center_intensity_analytic(x, A: RelationMatrix, intensities: IntensityProfile) -> float:
    x = np.asarray(x, dtype=float)
    c = spin_coefficients(intensities, A)
    if x.shape != c.shape:
        raise ValueError("spin vector does not match intensity profile")
    return float(abs(c @ x + fixed_field(intensities)) ** 2)


class OpticalModel:
    """Fourier-plane window as a linear superposition of per-spin responses.

    Precomputes, for every spin, the window spectrum its two blocks produce
    when the spin is +1 (misalignment masks included), plus the constant
    contribution of the third section and any spill-over border.  The result
    equals ``propagate_window(synthesize_field(...))`` to rounding error and
    costs O(n * window) per evaluation instead of a full transform.
    """

    def __init__(self, knobs: Knobs, cfg: OpticsConfig, misalignment: Misalignment | None = None,
                 radius: int = 0):
        mis = misalignment or Misalignment(0)
        prof, A = knobs.intensities, knobs.relation
        n = prof.n
        cfg.check_capacity(n, prof.n_fixed)
        self.cfg, self.misalignment, self.radius = cfg, mis, radius
        self.n = n
        H, W = cfg.grid_height, cfg.grid_width
        Er, Ec = dft_window_matrices(H, W, cfg.pad_factor, radius)

        mask = _apply_misalignment(np.ones((H, W), dtype=complex), cfg, Misalignment(min(mis.pixels, 0))).real
        bs = cfg.block_size
        w = 2 * radius + 1

        def unit_responses(section: Section, count: int):
            out = np.empty((count, w * w), dtype=complex)
            for b in range(count):
                br, bc = divmod(b, section.block_cols)
                r = section.row + br * bs
                c = section.col + bc * bs
                out[b] = (Er[:, r:r + bs] @ mask[r:r + bs, c:c + bs] @ Ec[c:c + bs, :]).ravel()
            return out

        resp = prof.xi[:, None] * unit_responses(cfg.sections[0], n)
        if len(cfg.sections) > 1:
            resp = resp + (A.entries * prof.eta)[:, None] * unit_responses(cfg.sections[1], n)
        self.responses = resp

        base = np.zeros(w * w, dtype=complex)
        if prof.n_fixed:
            vals = FIXED_PHASE_FACTOR * prof.sigma * prof.z
            base += vals @ unit_responses(cfg.sections[2], prof.n_fixed)
        if mis.pixels > 0:
            full = synthesize_field(np.ones(n), A, prof, cfg, mis)
            r0, c0, r1, c1 = cfg.modulated_area
            full[r0:r1, c0:c1] = 0
            base += (Er @ full @ Ec).ravel()
        self.base = base
        self.shape = (w, w)

    def window_field(self, x) -> np.ndarray:
        return self.base + np.asarray(x, dtype=float) @ self.responses

    def intensity(self, x) -> np.ndarray:
        return np.abs(self.window_field(x).reshape(self.shape)) ** 2

    def center_bound(self) -> float:
        """Largest centre intensity any spin configuration could produce."""
        c = self.radius * (2 * self.radius + 1) + self.radius
        return float((np.abs(self.responses[:, c]).sum() + abs(self.base[c])) ** 2)


@dataclass(frozen=True)
class DetectorConfig:
    bit_depth: int = 8
    frames: int = 5
    noise_sigma: float = 0.005  # fraction of the noiseless full scale
    quantize: bool = True

    def __post_init__(self):
        if not 1 <= self.bit_depth <= 16:
            raise ConfigurationError("bit_depth must be in [1, 16]")
        if self.frames < 1:
            raise ConfigurationError("frames must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")


@dataclass(frozen=True, eq=False)
class CCDImage:
    values: np.ndarray
    bit_depth: int = 8
    frames_averaged: int = 5


def detect(intensity, rng: np.random.Generator | None = None,
           config: DetectorConfig = DetectorConfig()) -> CCDImage:
    """Readout noise, per-frame quantisation to the frame maximum, frame averaging."""
    I = np.asarray(intensity, dtype=float)
    if config.noise_sigma > 0 and rng is None:
        raise ValueError("a random generator is needed when noise_sigma > 0")
    levels = 2 ** config.bit_depth - 1
    scale = config.noise_sigma * float(I.max(initial=0.0))
    acc = np.zeros_like(I)
    for _ in range(config.frames):
        frame = I
        if scale > 0:
            frame = np.clip(I + rng.normal(0.0, scale, size=I.shape), 0.0, None)
        if config.quantize:
            top = float(frame.max(initial=0.0))
            if top > 0:
                frame = np.round(frame * (levels / top)) * (top / levels)
        acc = acc + frame
    return CCDImage(acc / config.frames, config.bit_depth, config.frames)


def write_pgm(path, values, maxval: int = 255) -> None:
    """Binary PGM (P5) scaled so the largest value maps to ``maxval``."""
    v = np.asarray(values, dtype=float)
    top = float(v.max(initial=0.0))
    scaled = np.zeros_like(v) if top <= 0 else np.round(np.clip(v, 0, None) / top * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(scaled.astype(dtype).tobytes())


def phase_map(field: np.ndarray) -> np.ndarray:
    """Phase in [0, 2pi) with unlit pixels set to 0, for dumping as an image."""
    ph = np.mod(np.angle(field), 2 * np.pi)
    ph[np.abs(field) == 0] = 0.0
    return ph
