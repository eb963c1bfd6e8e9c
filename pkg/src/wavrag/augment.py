"""Audio augmentation chain: echo, noise mixing at a target SNR, random gain.

The chain applies echo unconditionally (with drawn delay and scale), then
noise with probability ``noise_prob``, then gain with probability
``gain_prob``. All parameters are drawn uniformly from the configured ranges
by a seeded generator, in a fixed order, and every applied operation is
recorded so a run can be replayed exactly from its log.

Draw order per chain invocation (one rng stream):

1. ``delay_ms ~ U(echo_delay_ms)``
2. ``scale ~ U(echo_scale)``
3. noise coin ``U(0,1)``; if it lands: noise index ``integers(len(corpus))``,
   then ``snr_db ~ U(snr_db)``
4. gain coin ``U(0,1)``; if it lands: ``gain_db ~ U(gain_db)``

Samples are kept as unclipped reals throughout; saturation to [-1, 1] happens
only at WAV write time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer
from .errors import SilentInputError

__all__ = [
    "AugmentConfig",
    "echo",
    "mix_noise_at_snr",
    "gain",
    "resample_linear",
    "augment_chain",
    "replay_chain",
]


@dataclass
class AugmentConfig:
    """Parameter ranges with the published defaults; all overridable."""

    echo_delay_ms: tuple[float, float] = (100.0, 500.0)
    echo_scale: tuple[float, float] = (0.0, 0.2)
    snr_db: tuple[float, float] = (-4.0, 14.0)
    noise_prob: float = 0.5
    gain_db: tuple[float, float] = (-4.0, 15.0)
    gain_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("echo_delay_ms", "echo_scale", "snr_db", "gain_db"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range ({lo}, {hi})")
        for name in ("noise_prob", "gain_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def echo(x: AudioBuffer, delay_ms: float, scale: float) -> AudioBuffer:
    """Add a delayed, scaled copy of the signal to itself; output length = input length.

    ``y[n] = x[n] + scale * x[n - d]`` with ``d = round(delay_ms * rate / 1000)``
    and ``x[m] = 0`` for ``m < 0``. A delay at or past the end degenerates to
    the identity.
    """
    if delay_ms < 0 or scale < 0:
        raise ValueError("delay_ms and scale must be non-negative")
    d = int(round(delay_ms * x.sample_rate / 1000.0))
    y = x.samples.copy()
    if scale != 0.0 and d < len(y):
        if d == 0:
            y += scale * x.samples
        else:
            y[d:] += scale * x.samples[:-d]
    return AudioBuffer(y, x.sample_rate)


def mix_noise_at_snr(x: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Mix noise into the signal so the resulting SNR equals ``snr_db``.

    The noise is tiled (or truncated) to the signal length first, and the gain
    ``g = sqrt(P_x / (P_noise * 10^(snr_db/10)))`` is computed from the tiled
    segment's power, so the measured SNR matches the target to float precision.
    """
    if noise.sample_rate != x.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {x.sample_rate} Hz vs noise {noise.sample_rate} Hz"
        )
    p_signal = np.mean(np.square(x.samples)) if len(x) else 0.0
    if p_signal == 0.0:
        raise SilentInputError("signal is silent; SNR is undefined")
    if len(noise) == 0 or not np.any(noise.samples):
        raise SilentInputError("noise is silent; SNR is undefined")
    reps = -(-len(x) // len(noise))
    tiled = np.tile(noise.samples, reps)[: len(x)]
    p_noise = np.mean(np.square(tiled))
    if p_noise == 0.0:
        raise SilentInputError("noise segment is silent; SNR is undefined")
    g = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioBuffer(x.samples + g * tiled, x.sample_rate)


def gain(x: AudioBuffer, gain_db: float) -> AudioBuffer:
    """Scale the signal by ``10^(gain_db/20)``."""
    return AudioBuffer(x.samples * 10.0 ** (gain_db / 20.0), x.sample_rate)


def resample_linear(x: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Linear-interpolation resample; identical rates return a bit-identical copy.

    Output length is ``round(len * target / src)``; positions past the last
    input sample hold its value.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == x.sample_rate:
        return AudioBuffer(x.samples.copy(), x.sample_rate)
    n = len(x)
    n_out = int(round(n * target_rate / x.sample_rate))
    if n == 0 or n_out == 0:
        return AudioBuffer(np.zeros(n_out), target_rate)
    positions = np.arange(n_out) * (x.sample_rate / target_rate)
    return AudioBuffer(np.interp(positions, np.arange(n), x.samples), target_rate)


def augment_chain(
    x: AudioBuffer,
    noise_corpus: list[AudioBuffer],
    cfg: AugmentConfig,
    rng: np.random.Generator | None = None,
) -> tuple[AudioBuffer, list[dict]]:
    """Run the full echo -> noise -> gain chain with seeded draws.

    Returns the augmented buffer and the applied-op log: one dict per applied
    operation, in order, carrying every drawn parameter. ``replay_chain`` on
    the same input and corpus reproduces the output exactly.
    """
    if cfg.noise_prob > 0 and not noise_corpus:
        raise ValueError("noise_corpus must be non-empty when noise_prob > 0")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []

    delay_ms = float(rng.uniform(*cfg.echo_delay_ms))
    scale = float(rng.uniform(*cfg.echo_scale))
    y = echo(x, delay_ms, scale)
    log.append({"op": "echo", "delay_ms": delay_ms, "scale": scale})

    if float(rng.random()) < cfg.noise_prob:
        index = int(rng.integers(len(noise_corpus)))
        snr_db = float(rng.uniform(*cfg.snr_db))
        noise = resample_linear(noise_corpus[index], y.sample_rate)
        y = mix_noise_at_snr(y, noise, snr_db)
        log.append({"op": "noise", "index": index, "snr_db": snr_db})

    if float(rng.random()) < cfg.gain_prob:
        gain_db = float(rng.uniform(*cfg.gain_db))
        y = gain(y, gain_db)
        log.append({"op": "gain", "gain_db": gain_db})

    return y, log


def replay_chain(x: AudioBuffer, noise_corpus: list[AudioBuffer], log: list[dict]) -> AudioBuffer:
    """Re-apply a recorded chain; bit-identical to the original run."""
    y = x
    for record in log:
        op = record["op"]
        if op == "echo":
            y = echo(y, record["delay_ms"], record["scale"])
        elif op == "noise":
            noise = resample_linear(noise_corpus[record["index"]], y.sample_rate)
            y = mix_noise_at_snr(y, noise, record["snr_db"])
        elif op == "gain":
            y = gain(y, record["gain_db"])
        else:
            raise ValueError(f"unknown op in applied log: {op!r}")
    return y
