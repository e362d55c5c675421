"""Complex-baseband RF channel: OOK keying, jamming, filtering, captures.

Everything is narrowband complex baseband around a fixed capture origin of
434.3 MHz at 2 Msps, mirroring an SDR front end. The fob keys a tone at
+120 kHz from the origin, one symbol per millisecond (2000 samples). The
jammer is seeded band-limited complex white noise parked between the origin
and the fob tone, so a wideband receiver drowns while a 50 kHz low-pass
around the tone recovers the keying untouched.

Demodulation is incoherent: mix down by the carrier offset, take the mean
magnitude per symbol, slice against half the on-amplitude. The per-symbol
confidence is the distance from the slicing threshold normalized to half the
on-amplitude, except that a magnitude driven past the nominal level (jam on
top of the symbol) scores toward zero rather than high; quality is the
minimum confidence over the signal.

Capture files are raw interleaved float32 little-endian I/Q plus a sidecar
text header (`<name>.hdr`) recording rate, origin and sample count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 2_000_000
DEFAULT_ORIGIN_HZ = 434_300_000

SYMBOL_RATE_BAUD = 1000
SAMPLES_PER_SYMBOL = SAMPLE_RATE_HZ // SYMBOL_RATE_BAUD

FOB_CARRIER_OFFSET_HZ = 120_000.0
CAR_FRONT_END_CUTOFF_HZ = 400_000.0

IQ_HEADER_SUFFIX = ".hdr"


class EmptySignalError(ValueError):
    """Signal too short to carry even one symbol."""


@dataclass
class BasebandSignal:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ
    origin_hz: int = DEFAULT_ORIGIN_HZ

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)

    def __len__(self) -> int:
        return len(self.samples)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


@dataclass
class OokConfig:
    symbol_rate_baud: int = SYMBOL_RATE_BAUD
    carrier_offset_hz: float = FOB_CARRIER_OFFSET_HZ
    on_amplitude: float = 1.0

    def samples_per_symbol(self, sample_rate_hz: int = SAMPLE_RATE_HZ) -> int:
        sps, rem = divmod(sample_rate_hz, self.symbol_rate_baud)
        if rem or sps <= 0:
            raise ValueError("sample rate must divide evenly into symbols")
        return sps


@dataclass
class JammerConfig:
    frequency_offset_hz: float = 20_000.0
    channel_width_hz: float = 60_000.0
    tx_power: float = 3.0            # mean power relative to a unit carrier
    packet_length_symbols: int = 160
    seed: int = 0


def _phasor(n: int, freq_hz: float, sample_rate_hz: int) -> np.ndarray:
    return np.exp(2j * np.pi * freq_hz * np.arange(n) / sample_rate_hz)


def ook_modulate(bits: list[int], cfg: OokConfig,
                 sample_rate_hz: int = SAMPLE_RATE_HZ,
                 origin_hz: int = DEFAULT_ORIGIN_HZ) -> BasebandSignal:
    """Rectangular on-off keying of the carrier at the configured offset."""
    if not bits:
        raise EmptySignalError("no bits to modulate")
    sps = cfg.samples_per_symbol(sample_rate_hz)
    envelope = np.repeat(np.asarray(bits, dtype=np.float64), sps)
    envelope *= cfg.on_amplitude
    samples = envelope * _phasor(len(envelope), cfg.carrier_offset_hz,
                                 sample_rate_hz)
    return BasebandSignal(samples, sample_rate_hz, origin_hz)


def ook_demodulate(sig: BasebandSignal, cfg: OokConfig) -> tuple[list[int], float]:
    """Slice symbols back to bits; returns (bits, quality in [0, 1]).

    Trailing samples short of a full symbol are discarded. quality is the
    worst per-symbol confidence: 1.0 for magnitudes sitting on a nominal
    level, 0.0 at the threshold or overdriven past nominal by half the
    on-amplitude.
    """
    sps = cfg.samples_per_symbol(sig.sample_rate_hz)
    n_sym = len(sig.samples) // sps
    if n_sym < 1:
        raise EmptySignalError(f"{len(sig.samples)} samples < one symbol")
    used = sig.samples[:n_sym * sps]
    mixed = used * _phasor(len(used), -cfg.carrier_offset_hz, sig.sample_rate_hz)
    mags = np.abs(mixed).reshape(n_sym, sps).mean(axis=1)
    threshold = 0.5 * cfg.on_amplitude
    bits = (mags >= threshold).astype(int)
    nominal = bits * cfg.on_amplitude
    confidence = 1.0 - np.clip(np.abs(mags - nominal) / threshold, 0.0, 1.0)
    return bits.tolist(), float(confidence.min())


def design_low_pass(cutoff_hz: float, transition_hz: float,
                    sample_rate_hz: int = SAMPLE_RATE_HZ) -> np.ndarray:
    """Blackman-windowed sinc taps, unit DC gain, forced odd length."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError("cutoff must sit inside (0, Nyquist)")
    if transition_hz <= 0:
        raise ValueError("transition width must be positive")
    length = math.ceil(4 * sample_rate_hz / transition_hz) | 1
    m = np.arange(length) - (length - 1) / 2
    fc = cutoff_hz / sample_rate_hz
    taps = 2 * fc * np.sinc(2 * fc * m) * np.blackman(length)
    return taps / taps.sum()


def mix_and_filter(sig: BasebandSignal, shift_hz: float, cutoff_hz: float,
                   transition_hz: float, shift_back: bool = False) -> BasebandSignal:
    """Shift by -shift_hz, low-pass, optionally shift back up.

    Default output stays at the shifted baseband (component of interest at
    0 Hz). Output length equals input length; edges are zero-padded by the
    convolution.
    """
    taps = design_low_pass(cutoff_hz, transition_hz, sig.sample_rate_hz)
    down = sig.samples * _phasor(len(sig.samples), -shift_hz, sig.sample_rate_hz)
    filtered = fftconvolve(down, taps, mode="same")
    if shift_back:
        filtered = filtered * _phasor(len(filtered), shift_hz, sig.sample_rate_hz)
    return BasebandSignal(filtered, sig.sample_rate_hz, sig.origin_hz)


def generate_jam(cfg: JammerConfig, duration_symbols: int,
                 sample_rate_hz: int = SAMPLE_RATE_HZ,
                 origin_hz: int = DEFAULT_ORIGIN_HZ) -> BasebandSignal:
    """Seeded band-limited noise burst at the configured offset and power.

    Same seed, same samples. tx_power scales mean power; zero power is a
    silent (all-zero) burst of the same length.
    """
    if duration_symbols <= 0:
        raise ValueError("duration must be at least one symbol")
    n = duration_symbols * (sample_rate_hz // SYMBOL_RATE_BAUD)
    if cfg.tx_power < 0:
        raise ValueError("tx_power cannot be negative")
    if cfg.tx_power == 0:
        return BasebandSignal(np.zeros(n, dtype=np.complex128),
                              sample_rate_hz, origin_hz)
    rng = np.random.default_rng(cfg.seed)
    white = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    taps = design_low_pass(cfg.channel_width_hz / 2, cfg.channel_width_hz / 10,
                           sample_rate_hz)
    shaped = fftconvolve(white, taps, mode="same")
    shaped = shaped * _phasor(n, cfg.frequency_offset_hz, sample_rate_hz)
    mean_power = float(np.mean(np.abs(shaped) ** 2))
    shaped *= np.sqrt(cfg.tx_power / mean_power)
    return BasebandSignal(shaped, sample_rate_hz, origin_hz)


def channel_mix(signals: list[BasebandSignal]) -> BasebandSignal:
    """Superpose signals on the shared channel, zero-padding the shorter ones."""
    if not signals:
        raise ValueError("nothing to mix")
    rates = {s.sample_rate_hz for s in signals}
    if len(rates) != 1:
        raise ValueError(f"sample rates differ: {sorted(rates)}")
    longest = max(len(s.samples) for s in signals)
    out = np.zeros(longest, dtype=np.complex128)
    for s in signals:
        out[:len(s.samples)] += s.samples
    return BasebandSignal(out, signals[0].sample_rate_hz, signals[0].origin_hz)


# -- capture files -----------------------------------------------------

def write_iq(sig: BasebandSignal, path: str | Path) -> Path:
    """Dump interleaved float32 LE I/Q plus the text sidecar header."""
    path = Path(path)
    interleaved = np.empty(2 * len(sig.samples), dtype="<f4")
    interleaved[0::2] = sig.samples.real
    interleaved[1::2] = sig.samples.imag
    path.write_bytes(interleaved.tobytes())
    header = (f"format=complex64-interleaved-le\n"
              f"sample_rate_hz={sig.sample_rate_hz}\n"
              f"origin_hz={sig.origin_hz}\n"
              f"samples={len(sig.samples)}\n")
    Path(str(path) + IQ_HEADER_SUFFIX).write_text(header)
    return path


def read_iq(path: str | Path) -> BasebandSignal:
    path = Path(path)
    header: dict[str, str] = {}
    for line in Path(str(path) + IQ_HEADER_SUFFIX).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    return BasebandSignal(samples,
                          int(header.get("sample_rate_hz", SAMPLE_RATE_HZ)),
                          int(header.get("origin_hz", DEFAULT_ORIGIN_HZ)))
