"""Synthetic trajectory generators with known ground-truth memory."""

import logging

import numpy as np

from sake.errors import ConfigurationError, GenerationError
from sake.rng import derive_rng
from sake.trajstore.pool import TrajectoryPool

logger = logging.getLogger(__name__)

MAX_STABILITY_ATTEMPTS = 100


# ============================================================================
# Linear lag system
# ============================================================================


def companion_spectral_radius(coefs: np.ndarray) -> float:
    """Spectral radius of the companion matrix of VAR coefficients (p, dim, dim)."""
    p, dim, _ = coefs.shape
    companion = np.zeros((p * dim, p * dim))
    companion[:dim, :] = np.concatenate(list(coefs), axis=1)
    if p > 1:
        companion[dim:, :-dim] = np.eye((p - 1) * dim)
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def sample_var_coefficients(
    dim: int,
    true_lag: int,
    stability_margin: float,
    rng: np.random.Generator,
    coef_scale: float = 1.0,
) -> np.ndarray:
    """Draw VAR(true_lag) coefficients whose companion radius is <= 1 - margin.

    Resamples at most MAX_STABILITY_ATTEMPTS times; never shrinks coefficients.
    """
    limit = 1.0 - stability_margin
    spread = coef_scale / (np.sqrt(dim) * true_lag)
    for attempt in range(MAX_STABILITY_ATTEMPTS):
        coefs = rng.normal(0.0, spread, size=(true_lag, dim, dim))
        radius = companion_spectral_radius(coefs)
        if radius <= limit:
            logger.debug(
                "stable VAR(%d) coefficients after %d draws (radius %.3f)",
                true_lag, attempt + 1, radius,
            )
            return coefs
    raise GenerationError(
        f"no VAR coefficients with spectral radius <= {limit:.3f} after {MAX_STABILITY_ATTEMPTS} draws "
        f"(dim={dim}, true_lag={true_lag}, stability_margin={stability_margin}, coef_scale={coef_scale})"
    )


def simulate_var(
    coefs: np.ndarray,
    n_traj: int,
    T: int,
    noise_sigma: float,
    rng: np.random.Generator,
    burn_in: int = 0,
) -> np.ndarray:
    """Simulate VAR trajectories, shape (n_traj, T, dim)."""
    p, dim, _ = coefs.shape
    total = T + burn_in
    x = np.zeros((n_traj, total, dim))
    x[:, :p] = rng.normal(0.0, 1.0, size=(n_traj, p, dim))
    innovations = rng.normal(0.0, 1.0, size=(n_traj, total, dim)) * noise_sigma
    for t in range(p, total):
        step = innovations[:, t].copy()
        for lag in range(1, p + 1):
            step += x[:, t - lag] @ coefs[lag - 1].T
        x[:, t] = step
    return x[:, burn_in:]


def generate_linear_lag_system(
    dim: int,
    true_lag: int,
    n_traj: int,
    T: int,
    noise_sigma: float,
    stability_margin: float,
    seed: int,
    coef_scale: float = 1.0,
    burn_in: int = 0,
) -> TrajectoryPool:
    """VAR(true_lag) trajectories with C=dim, H=W=1.

    With coef_scale=0 the coefficients vanish and trajectories are i.i.d. innovations
    (plus the random initial frames).
    """
    if dim < 1 or n_traj < 1:
        raise ConfigurationError(f"dim and n_traj must be >= 1, got dim={dim}, n_traj={n_traj}")
    if true_lag < 1:
        raise ConfigurationError(f"true_lag must be >= 1, got {true_lag}")
    if T <= true_lag + 2:
        raise ConfigurationError(f"T must exceed true_lag + 2, got T={T}, true_lag={true_lag}")
    if not 0.0 < stability_margin < 1.0:
        raise ConfigurationError(f"stability_margin must lie in (0, 1), got {stability_margin}")
    if noise_sigma < 0:
        raise ConfigurationError(f"noise_sigma must be >= 0, got {noise_sigma}")

    rng = derive_rng(seed, "linear")
    coefs = sample_var_coefficients(dim, true_lag, stability_margin, rng, coef_scale)
    x = simulate_var(coefs, n_traj, T, noise_sigma, rng, burn_in=burn_in)

    meta = {
        "generator": "linear",
        "params": {
            "dim": dim,
            "true_lag": true_lag,
            "n_traj": n_traj,
            "T": T,
            "noise_sigma": noise_sigma,
            "stability_margin": stability_margin,
            "coef_scale": coef_scale,
            "burn_in": burn_in,
        },
        "seed": seed,
        "true_lag": true_lag,
        "spectral_radius": companion_spectral_radius(coefs) if coef_scale else 0.0,
    }
    return TrajectoryPool(data=x[:, :, :, None, None], meta=meta)


# ============================================================================
# 2-D diffusion
# ============================================================================


def _smooth_field(grid: int, modes: int, rng: np.random.Generator) -> np.ndarray:
    """Random sum of low cosine modes; each mode satisfies zero-flux boundaries."""
    coords = (np.arange(grid) + 0.5) / grid
    field = np.full((grid, grid), rng.normal())
    for kx in range(modes + 1):
        for ky in range(modes + 1):
            if kx == 0 and ky == 0:
                continue
            amp = rng.normal() / (1.0 + kx * kx + ky * ky)
            field += amp * np.outer(np.cos(np.pi * kx * coords), np.cos(np.pi * ky * coords))
    return field


def diffusion_step(u: np.ndarray, r: float) -> np.ndarray:
    """One explicit step u + r * laplacian(u) with reflecting (zero-flux) ghost cells."""
    padded = np.pad(u, 1, mode="edge")
    lap = (
        padded[2:, 1:-1] + padded[:-2, 1:-1] + padded[1:-1, 2:] + padded[1:-1, :-2] - 4.0 * u
    )
    return u + r * lap


def simulate_diffusion(initial: np.ndarray, T: int, r: float, substeps: int = 1) -> np.ndarray:
    """Roll an initial field forward, saving T frames (the first is the initial field)."""
    frames = np.empty((T, *initial.shape))
    u = initial.astype(np.float64)
    frames[0] = u
    for t in range(1, T):
        for _ in range(substeps):
            u = diffusion_step(u, r)
        frames[t] = u
    return frames


def generate_diffusion2d(
    grid: int,
    n_traj: int,
    T: int,
    diffusivity: float,
    seed: int,
    dt: float = 1.0,
    dx: float = 1.0,
    substeps: int = 1,
    modes: int = 3,
) -> TrajectoryPool:
    """Explicit finite-difference heat equation on a grid x grid square, C=1."""
    r = diffusivity * dt / (dx * dx)
    if r > 0.25:
        raise ConfigurationError(
            f"explicit scheme unstable: diffusivity*dt/dx^2 = {r:.4f} > 0.25 "
            f"(diffusivity={diffusivity}, dt={dt}, dx={dx})"
        )
    if diffusivity < 0:
        raise ConfigurationError(f"diffusivity must be >= 0, got {diffusivity}")
    if grid < 1 or n_traj < 1 or T < 2:
        raise ConfigurationError(f"need grid >= 1, n_traj >= 1, T >= 2; got {grid}, {n_traj}, {T}")

    rng = derive_rng(seed, "diffusion2d")
    data = np.empty((n_traj, T, 1, grid, grid))
    for i in range(n_traj):
        data[i, :, 0] = simulate_diffusion(_smooth_field(grid, modes, rng), T, r, substeps)

    meta = {
        "generator": "diffusion2d",
        "params": {
            "grid": grid,
            "n_traj": n_traj,
            "T": T,
            "diffusivity": diffusivity,
            "dt": dt,
            "dx": dx,
            "substeps": substeps,
            "modes": modes,
        },
        "seed": seed,
        "true_lag": 1,
    }
    return TrajectoryPool(data=data, meta=meta)


GENERATORS = {
    "linear": generate_linear_lag_system,
    "diffusion2d": generate_diffusion2d,
}


def generate(system: str, params: dict, seed: int) -> TrajectoryPool:
    """Dispatch to a named generator."""
    try:
        fn = GENERATORS[system]
    except KeyError:
        raise ConfigurationError(f"unknown generator {system!r}; expected one of {sorted(GENERATORS)}")
    try:
        return fn(**params, seed=seed)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for generator {system!r}: {exc}") from exc
