"""Wireless-layer math: Rayleigh fading gains, Shannon rate, transmission latency.

The power gain of each link is g = |h|^2 with h a zero-mean complex Gaussian
whose real and imaginary parts each have standard deviation `rayleigh_sigma`,
so E[g] = 2 * sigma^2.  Rates are in bits per second: the allocated bandwidth
multiplies the spectral efficiency so that latency = payload / rate is
dimensionally consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelParams:
    """Fading scale and noise spectral density shared by all links."""

    rayleigh_sigma: float = 0.2
    noise_power: float = 1e-8  # W/Hz

    def __post_init__(self) -> None:
        if not self.rayleigh_sigma > 0.0:
            raise ValueError(f"rayleigh_sigma must be > 0, got {self.rayleigh_sigma}")
        if not self.noise_power > 0.0:
            raise ValueError(f"noise_power must be > 0, got {self.noise_power}")


@dataclass(frozen=True)
class LinkAllocation:
    """Transmit power (W), power gain and bandwidth (Hz) of one user's link."""

    tx_power: float
    channel_gain: float
    bandwidth: float

    def __post_init__(self) -> None:
        if self.tx_power < 0.0 or self.channel_gain < 0.0 or self.bandwidth < 0.0:
            raise ValueError("link allocation fields must be non-negative")


def sample_channel_gains(rng: np.random.Generator, params: ChannelParams,
                         num_users: int) -> np.ndarray:
    """Draw one squared-magnitude Rayleigh gain per user.

    Consumes exactly 2 * num_users normal draws from `rng`, so callers can
    rely on a fixed stream layout for reproducibility.
    """
    if num_users < 1:
        raise ValueError(f"num_users must be >= 1, got {num_users}")
    re = rng.standard_normal(num_users) * params.rayleigh_sigma
    im = rng.standard_normal(num_users) * params.rayleigh_sigma
    return re * re + im * im


def transmission_rate(link: LinkAllocation, params: ChannelParams) -> float:
    """Achievable rate B * log2(1 + p*g / (B*N0)) in bits per second."""
    if not link.bandwidth > 0.0:
        raise ValueError("transmission_rate requires bandwidth > 0")
    snr = link.tx_power * link.channel_gain / (link.bandwidth * params.noise_power)
    return link.bandwidth * math.log2(1.0 + snr)


def transmission_latency(payload_bits: float, rate: float) -> float:
    """Seconds needed to push `payload_bits` through a link at `rate` bits/s.

    A zero rate yields math.inf; the environment clamps that to its latency
    sentinel before computing penalties.
    """
    if not payload_bits > 0.0:
        raise ValueError(f"payload_bits must be > 0, got {payload_bits}")
    if rate <= 0.0:
        return math.inf
    return payload_bits / rate
