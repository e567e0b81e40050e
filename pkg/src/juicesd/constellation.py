"""Symbol constellations and their rotation groups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MATCH_TOL = 1e-9

_NAMED = {
    "bpsk": lambda: np.array([1.0, -1.0], dtype=complex),
    "qpsk": lambda: np.exp(1j * np.pi * np.array([0.25, 0.75, 1.25, 1.75])),
    "16qam": lambda: np.array(
        [a + 1j * b for a in (-3, -1, 1, 3) for b in (-3, -1, 1, 3)], dtype=complex
    ),
}


class ConstellationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-energy symbol set together with its rotational symmetry.

    ``subsets[i]`` holds point indices whose phase lies in the sector
    ``[i*theta0, (i+1)*theta0)``. Members are ordered so that
    ``points[subsets[i][m]] == exp(1j*i*theta0) * points[subsets[0][m]]``.
    """

    points: np.ndarray
    theta0: float
    omega_order: int
    subsets: tuple
    reference_symbol: complex
    name: str = "custom"

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def omega(self) -> np.ndarray:
        """Rotation angles theta0, 2*theta0, ..., 2*pi."""
        return self.theta0 * np.arange(1, self.omega_order + 1)

    @property
    def rotations(self) -> np.ndarray:
        """exp(1j*i*theta0) for i = 0..omega_order-1."""
        return np.exp(1j * self.theta0 * np.arange(self.omega_order))

    @property
    def base_subset(self) -> np.ndarray:
        return self.points[self.subsets[0]]

    @property
    def reference_index(self) -> int:
        return int(np.argmin(np.abs(self.points - self.reference_symbol)))

    def nearest(self, z) -> np.ndarray:
        """Index of the nearest constellation point for every entry of ``z``."""
        z = np.asarray(z)
        d = np.abs(z[..., None] - self.points)
        return np.argmin(d, axis=-1)

    def index_of(self, z) -> np.ndarray:
        return self.nearest(z)

    def sample(self, rng, size=None):
        return sample_symbol(self, rng, size)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "size": int(self.size),
            "omega_order": int(self.omega_order),
            "theta0": float(self.theta0),
            "reference_symbol": [float(self.reference_symbol.real), float(self.reference_symbol.imag)],
        }


def _permutation_under(points, rot):
    """Index map i -> j with rot*points[i] == points[j], or None."""
    rotated = points * rot
    d = np.abs(rotated[:, None] - points[None, :])
    j = np.argmin(d, axis=1)
    if np.all(d[np.arange(points.size), j] < _MATCH_TOL) and np.unique(j).size == points.size:
        return j
    return None


def _find_theta0(points):
    phases = np.angle(points)
    nz = np.abs(points) > _MATCH_TOL
    diffs = np.mod(phases[nz][:, None] - phases[nz][None, :], 2 * np.pi).ravel()
    cands = np.sort(diffs[diffs > 1e-9])
    cands = np.append(cands, 2 * np.pi)
    # dedupe within tolerance
    keep = [cands[0]]
    for c in cands[1:]:
        if c - keep[-1] > 1e-9:
            keep.append(c)
    for theta in keep:
        if _permutation_under(points, np.exp(1j * theta)) is not None:
            # snap to an exact divisor of 2*pi
            order = int(round(2 * np.pi / theta))
            if order >= 1 and abs(order * theta - 2 * np.pi) < 1e-6:
                return 2 * np.pi / order, order
    return 2 * np.pi, 1


def build_constellation(name_or_points, reference=None) -> Constellation:
    """Build a normalized constellation from a scheme name or explicit points.

    Parameters
    ----------
    name_or_points : str or sequence of complex
        ``"bpsk"``, ``"qpsk"``, ``"16qam"`` or explicit symbol values.
    reference : complex, optional
        Reference (pilot) symbol. Defaults to the point with the smallest
        nonnegative phase (largest magnitude on ties).
    """
    if isinstance(name_or_points, str):
        key = name_or_points.lower()
        if key not in _NAMED:
            raise ConstellationError(f"unknown constellation {name_or_points!r}")
        pts = _NAMED[key]()
        name = key
    else:
        pts = np.asarray(name_or_points, dtype=complex).ravel()
        name = "custom"
    if pts.size < 2:
        raise ConstellationError("need at least 2 points")
    energy = np.mean(np.abs(pts) ** 2)
    if not energy > 0:
        raise ConstellationError("zero average energy")
    pts = pts / np.sqrt(energy)
    gaps = np.abs(pts[:, None] - pts[None, :]) + np.eye(pts.size)
    if np.min(gaps) < 1e-9:
        raise ConstellationError("coincident constellation points")

    theta0, order = _find_theta0(pts)

    if order > 1:
        # snap the points onto the exact orbit structure so that rotation
        # relations hold to machine precision
        pts = _symmetrize(pts, theta0, order)

    phase = np.mod(np.angle(pts), 2 * np.pi)
    sector = np.floor((phase + 1e-9) / theta0).astype(int) % order
    base = np.flatnonzero(sector == 0)
    if base.size * order != pts.size:
        raise ConstellationError("phase sectors do not partition the constellation evenly")
    # order base members by phase then magnitude for determinism
    base = base[np.lexsort((np.abs(pts[base]), phase[base]))]
    subsets = []
    for i in range(order):
        rot = np.exp(1j * i * theta0)
        idx = np.argmin(np.abs(pts[base][:, None] * rot - pts[None, :]), axis=1)
        subsets.append(np.asarray(idx, dtype=int))
    subsets = tuple(subsets)

    if reference is None:
        cand = np.flatnonzero(np.abs(pts) > _MATCH_TOL)
        ph = np.round(phase[cand], 12)
        best = cand[np.lexsort((-np.abs(pts[cand]), ph))[0]]
        ref = complex(pts[best])
    else:
        r = complex(reference) / np.sqrt(energy)
        i = int(np.argmin(np.abs(pts - r)))
        if abs(pts[i] - r) > 1e-6:
            raise ConstellationError("reference symbol is not a constellation point")
        ref = complex(pts[i])

    pts.setflags(write=False)
    for s in subsets:
        s.setflags(write=False)
    return Constellation(pts, float(theta0), int(order), subsets, ref, name)


def _symmetrize(pts, theta0, order):
    rot = np.exp(1j * theta0)
    perm = _permutation_under(pts, rot)
    out = pts.copy()
    seen = np.zeros(pts.size, bool)
    for start in range(pts.size):
        if seen[start]:
            continue
        orbit = [start]
        while True:
            nxt = perm[orbit[-1]]
            if nxt == start:
                break
            orbit.append(nxt)
        orbit = np.array(orbit)
        seen[orbit] = True
        # average the de-rotated orbit to get one exact representative
        k = np.arange(orbit.size)
        rep = np.mean(pts[orbit] * np.exp(-1j * theta0 * k))
        out[orbit] = rep * np.exp(1j * theta0 * k)
    out = out / np.sqrt(np.mean(np.abs(out) ** 2))
    # snap values that should be real/imaginary
    out.real[np.abs(out.real) < 1e-15] = 0.0
    out.imag[np.abs(out.imag) < 1e-15] = 0.0
    return out


def sample_symbol(constellation: Constellation, rng, size=None):
    """Uniform draw(s) from the constellation."""
    idx = rng.integers(0, constellation.size, size=size)
    return constellation.points[idx]
