"""Per-slot channel physics: path loss, fading, CSI aging, SINR, and rate.

Vehicle-to-UAV links use an elevation-angle LoS-probability path loss with the
LoS/NLoS mix averaged in dB; vehicle-to-vehicle links use the ground model
44.23 + 16.7*log10(d). Feedback delay on V2V small-scale fading follows a
first-order Gauss-Markov step with correlation J0(2*pi*f_c*s_rel*T_delay/c).
All SINR and rate math is linear SI; dB is converted exactly once when gains
are assembled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import j0 as _scipy_j0

from .errors import InvalidGeometryError
from .mobility import UavState, VehicleState


@dataclass(frozen=True)
class ChannelParams:
    """Radio constants. Defaults follow a 5.9 GHz, 2 MHz-channel highway setup."""

    carrier_frequency: float = 5.9e9
    bandwidth_per_channel: float = 2e6
    noise_psd: float = 10.0 ** (-174.0 / 10.0) * 1e-3  # -174 dBm/Hz, linear W/Hz
    alpha_los: float = 1.0
    alpha_nlos: float = 20.0
    env_a: float = 12.08
    env_b: float = 0.11
    light_speed: float = 299_792_458.0
    t_delay: float = 0.010
    s_rel_min: float = 1.5  # floor on per-link relative speed, m/s

    def __post_init__(self):
        for name in ("carrier_frequency", "bandwidth_per_channel", "noise_psd", "env_a", "env_b", "light_speed"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.alpha_los < 0.0 or self.alpha_nlos < 0.0:
            raise ValueError("alpha_los and alpha_nlos must be >= 0")
        if self.t_delay < 0.0:
            raise ValueError("t_delay must be >= 0")

    @property
    def noise_power(self) -> float:
        """Thermal noise power per channel, N0*B, in watts."""
        return self.noise_psd * self.bandwidth_per_channel


@dataclass(frozen=True)
class FadingState:
    """One slot's small-scale fading draws, all CN(0,1).

    g_u_m / g_u_k feed the V2U-family gains (no aging). g_v_k_hat / g_v_mk_hat
    are the pre-delay V2V coefficients that the Gauss-Markov step ages.
    """

    g_u_m: np.ndarray  # (M,) complex
    g_u_k: np.ndarray  # (K,) complex
    g_v_k_hat: np.ndarray  # (K,) complex
    g_v_mk_hat: np.ndarray  # (M, K) complex


@dataclass(frozen=True)
class LinkGains:
    """All per-slot linear power gains plus the pieces needed to re-age them.

    h_v_k / h_v_mk are built from aged fading; the *_hat variants from the
    pre-delay fading (used by the delay-blind observation mode). pl_*_linear,
    rho_* and g_*_hat support outage Monte-Carlo redraws of the discrepancy
    term with path loss and pre-delay fading held fixed.
    """

    h_u_m: np.ndarray  # (M,)
    h_u_k: np.ndarray  # (K,)
    h_v_k: np.ndarray  # (K,)
    h_v_mk: np.ndarray  # (M, K)
    h_v_k_hat: np.ndarray  # (K,)
    h_v_mk_hat: np.ndarray  # (M, K)
    pl_v_k_linear: np.ndarray  # (K,)
    pl_v_mk_linear: np.ndarray  # (M, K)
    rho_v_k: np.ndarray  # (K,) aging correlation per V2V desired link
    rho_v_mk: np.ndarray  # (M, K)
    g_v_k_hat: np.ndarray  # (K,) complex
    g_v_mk_hat: np.ndarray  # (M, K) complex

    @property
    def m_links(self) -> int:
        return self.h_u_m.shape[0]

    @property
    def k_links(self) -> int:
        return self.h_u_k.shape[0]


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def bessel_j0(x):
    """Zero-order Bessel function of the first kind (scipy-backed)."""
    return float(_scipy_j0(x)) if np.isscalar(x) else _scipy_j0(x)


def los_probability(uav: UavState, vehicle: VehicleState, params: ChannelParams) -> float:
    """Elevation-angle sigmoid Pr_LoS = 1/(1 + a*exp(-b*(theta_deg - a)))."""
    horiz = math.hypot(uav.x - vehicle.x, uav.y - vehicle.y)
    theta_deg = math.degrees(math.atan2(uav.altitude, horiz))  # horiz = 0 -> 90 deg
    return 1.0 / (1.0 + params.env_a * math.exp(-params.env_b * (theta_deg - params.env_a)))


def v2u_path_loss(
    uav: UavState,
    vehicle: VehicleState,
    params: ChannelParams,
    *,
    pr_los: float | None = None,
) -> float:
    """Air-ground path loss in dB: LoS/NLoS free-space variants mixed in dB.

    pr_los overrides the elevation-angle probability (test hook).
    """
    horiz = math.hypot(uav.x - vehicle.x, uav.y - vehicle.y)
    d = math.sqrt(uav.altitude**2 + horiz**2)
    if d <= 0.0:
        raise InvalidGeometryError("V2U link has zero 3-D distance")
    if pr_los is None:
        pr_los = los_probability(uav, vehicle, params)
    fspl = 20.0 * math.log10(4.0 * math.pi * params.carrier_frequency * d / params.light_speed)
    return pr_los * (fspl + params.alpha_los) + (1.0 - pr_los) * (fspl + params.alpha_nlos)


def v2v_path_loss(tx: VehicleState, rx: VehicleState) -> float:
    """Ground-to-ground path loss in dB: 44.23 + 16.7*log10(d)."""
    d = math.hypot(tx.x - rx.x, tx.y - rx.y)
    if d <= 0.0:
        raise InvalidGeometryError(f"V2V link {tx.id}->{rx.id} has zero distance")
    return 44.23 + 16.7 * math.log10(d)


def aging_correlation(s_rel: float, params: ChannelParams) -> float:
    """Gauss-Markov correlation J0(2*pi*f_c*s_rel*T_delay/c) for one link."""
    return bessel_j0(2.0 * math.pi * params.carrier_frequency * s_rel * params.t_delay / params.light_speed)


def age_fading(g_hat: complex, s_rel: float, params: ChannelParams, rng: np.random.Generator) -> complex:
    """Age a pre-delay fading coefficient across the feedback delay.

    g = rho*g_hat + delta with delta ~ CN(0, 1 - rho^2); with zero delay (or
    zero relative speed) the coefficient is returned unchanged, bit for bit.
    """
    if params.t_delay == 0.0 or s_rel == 0.0:
        return g_hat
    rho = aging_correlation(s_rel, params)
    var = max(0.0, 1.0 - rho * rho)
    scale = math.sqrt(var / 2.0)
    delta = complex(rng.standard_normal() * scale, rng.standard_normal() * scale)
    return rho * g_hat + delta


def draw_fading(m_links: int, k_links: int, rng: np.random.Generator) -> FadingState:
    """Draw one slot's i.i.d. CN(0,1) coefficients (real/imag each N(0, 1/2))."""

    def cn01(shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)

    return FadingState(
        g_u_m=cn01(m_links),
        g_u_k=cn01(k_links),
        g_v_k_hat=cn01(k_links),
        g_v_mk_hat=cn01((m_links, k_links)),
    )


def _rel_speed(a: VehicleState, b: VehicleState, params: ChannelParams) -> float:
    return max(abs(a.speed - b.speed), params.s_rel_min)


def assemble_gains(
    uav: UavState,
    v2u_tx: list[VehicleState],
    v2v_pairs: list[tuple[VehicleState, VehicleState]],
    fading: FadingState,
    params: ChannelParams,
    rng: np.random.Generator,
) -> LinkGains:
    """Compose |g|^2 / PL_linear for every link family at the given geometry.

    v2u_tx holds the M V2U transmitters; v2v_pairs the K (tx, rx) vehicle
    pairs. Aged V2V families apply age_fading per coefficient (desired links
    first, then the M x K interference family row-major); pre-delay families
    use the raw coefficients.
    """
    m_links, k_links = len(v2u_tx), len(v2v_pairs)
    if fading.g_u_m.shape != (m_links,) or fading.g_v_mk_hat.shape != (m_links, k_links):
        raise ValueError("fading dimensions do not match link counts")

    h_u_m = np.empty(m_links)
    for m, veh in enumerate(v2u_tx):
        pl = db_to_linear(v2u_path_loss(uav, veh, params))
        h_u_m[m] = abs(fading.g_u_m[m]) ** 2 / pl

    h_u_k = np.empty(k_links)
    for k, (tx, _rx) in enumerate(v2v_pairs):
        pl = db_to_linear(v2u_path_loss(uav, tx, params))
        h_u_k[k] = abs(fading.g_u_k[k]) ** 2 / pl

    pl_v_k = np.empty(k_links)
    rho_v_k = np.empty(k_links)
    h_v_k = np.empty(k_links)
    h_v_k_hat = np.empty(k_links)
    for k, (tx, rx) in enumerate(v2v_pairs):
        pl_v_k[k] = db_to_linear(v2v_path_loss(tx, rx))
        s_rel = _rel_speed(tx, rx, params)
        rho_v_k[k] = aging_correlation(s_rel, params)
        aged = age_fading(fading.g_v_k_hat[k], s_rel, params, rng)
        h_v_k[k] = abs(aged) ** 2 / pl_v_k[k]
        h_v_k_hat[k] = abs(fading.g_v_k_hat[k]) ** 2 / pl_v_k[k]

    pl_v_mk = np.empty((m_links, k_links))
    rho_v_mk = np.empty((m_links, k_links))
    h_v_mk = np.empty((m_links, k_links))
    h_v_mk_hat = np.empty((m_links, k_links))
    for m, veh in enumerate(v2u_tx):
        for k, (_tx, rx) in enumerate(v2v_pairs):
            pl_v_mk[m, k] = db_to_linear(v2v_path_loss(veh, rx))
            s_rel = _rel_speed(veh, rx, params)
            rho_v_mk[m, k] = aging_correlation(s_rel, params)
            aged = age_fading(fading.g_v_mk_hat[m, k], s_rel, params, rng)
            h_v_mk[m, k] = abs(aged) ** 2 / pl_v_mk[m, k]
            h_v_mk_hat[m, k] = abs(fading.g_v_mk_hat[m, k]) ** 2 / pl_v_mk[m, k]

    return LinkGains(
        h_u_m=h_u_m,
        h_u_k=h_u_k,
        h_v_k=h_v_k,
        h_v_mk=h_v_mk,
        h_v_k_hat=h_v_k_hat,
        h_v_mk_hat=h_v_mk_hat,
        pl_v_k_linear=pl_v_k,
        pl_v_mk_linear=pl_v_mk,
        rho_v_k=rho_v_k,
        rho_v_mk=rho_v_mk,
        g_v_k_hat=fading.g_v_k_hat.copy(),
        g_v_mk_hat=fading.g_v_mk_hat.copy(),
    )


def v2u_sinr(m: int, gains: LinkGains, action, params: ChannelParams) -> float:
    """SINR of V2U link m under the given feasible action (true gains)."""
    interference = 0.0
    for k in range(gains.k_links):
        if action.x[k, m]:
            interference += action.p_k[k] * gains.h_u_k[k]
    return action.p_m[m] * gains.h_u_m[m] / (interference + params.noise_power)


def v2v_sinr(k: int, gains: LinkGains, action, params: ChannelParams) -> float:
    """SINR of V2V link k under the given feasible action (aged gains)."""
    interference = 0.0
    for m in range(gains.m_links):
        if action.x[k, m]:
            interference += action.p_m[m] * gains.h_v_mk[m, k]
    return action.p_k[k] * gains.h_v_k[k] / (interference + params.noise_power)


def v2u_rate(gamma: float, params: ChannelParams) -> float:
    """Shannon rate B*log2(1+gamma) in bits/second."""
    if gamma < 0.0:
        raise ValueError(f"SINR must be >= 0, got {gamma}")
    return params.bandwidth_per_channel * math.log2(1.0 + gamma)
