"""Synthetic IQ baseband sources and the channel impairment chain.

Eleven modulation schemes (8 digital, 3 analog) at 8 samples/symbol with
root-raised-cosine shaping for the linear schemes, plus a channel that
applies selective fading, carrier-frequency offset, sample-rate offset and
AWGN at a configured SNR.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ContractError
from .rng import stream

SAMPLES_PER_SYMBOL = 8
RRC_ROLLOFF = 0.35
RRC_SPAN = 8  # symbols each side of the peak contribute ISI
AUDIO_CUTOFF = 0.15  # fraction of Nyquist
FM_DEVIATION = 0.1  # fraction of sample rate
FSK_MOD_INDEX = 0.5
GFSK_BT = 0.35


class ModulationScheme(IntEnum):
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3
    QAM64 = 4
    PAM4 = 5
    GFSK = 6
    CPFSK = 7
    WBFM = 8
    AM_DSB = 9
    AM_SSB = 10


DIGITAL_LINEAR = (
    ModulationScheme.BPSK,
    ModulationScheme.QPSK,
    ModulationScheme.PSK8,
    ModulationScheme.QAM16,
    ModulationScheme.QAM64,
    ModulationScheme.PAM4,
)


def _normalized(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.complex128)
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


_QAM16_SIDE = np.array([-3, -1, 1, 3], dtype=np.float64)
_QAM64_SIDE = np.array([-7, -5, -3, -1, 1, 3, 5, 7], dtype=np.float64)

CONSTELLATIONS = {
    ModulationScheme.BPSK: _normalized([1, -1]),
    ModulationScheme.QPSK: _normalized([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]),
    ModulationScheme.PSK8: _normalized(np.exp(1j * (2 * np.pi * np.arange(8) / 8 + np.pi / 8))),
    ModulationScheme.QAM16: _normalized((_QAM16_SIDE[:, None] + 1j * _QAM16_SIDE[None, :]).ravel()),
    ModulationScheme.QAM64: _normalized((_QAM64_SIDE[:, None] + 1j * _QAM64_SIDE[None, :]).ravel()),
    ModulationScheme.PAM4: _normalized([-3, -1, 1, 3]),
}


def root_raised_cosine(sps: int = SAMPLES_PER_SYMBOL, rolloff: float = RRC_ROLLOFF, span: int = RRC_SPAN):
    """RRC impulse response, `span` symbols each side, peak-normalized."""
    n = span * sps
    t = np.arange(-n, n + 1, dtype=np.float64) / sps
    beta = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 - beta + 4 * beta / np.pi
        elif abs(abs(ti) - 1.0 / (4 * beta)) < 1e-9:
            h[i] = (beta / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        else:
            num = np.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * np.cos(np.pi * ti * (1 + beta))
            den = np.pi * ti * (1 - (4 * beta * ti) ** 2)
            h[i] = num / den
    return h / h.max()


_RRC = root_raised_cosine()


def pulse_shape(symbols: np.ndarray, length: int, sps: int = SAMPLES_PER_SYMBOL) -> np.ndarray:
    """Upsample symbols and apply the RRC filter.

    Output index k*sps lands on the center of symbol k; `symbols` must be
    long enough to cover `length` samples plus the filter span.
    """
    up = np.zeros(len(symbols) * sps, dtype=np.complex128)
    up[::sps] = symbols
    shaped = np.convolve(up, _RRC)
    delay = (len(_RRC) - 1) // 2
    out = shaped[delay : delay + length]
    if len(out) < length:
        raise ContractError(f"pulse_shape: {len(symbols)} symbols cover only {len(out)} samples")
    return out


def _lowpass_taps(cutoff: float, ntaps: int = 129) -> np.ndarray:
    k = np.arange(ntaps) - (ntaps - 1) / 2
    taps = np.sinc(cutoff * k) * np.hamming(ntaps)
    return taps / taps.sum()


_AUDIO_LP = _lowpass_taps(AUDIO_CUTOFF)


def audio_source(rng: np.random.Generator, length: int) -> np.ndarray:
    """Band-limited Gaussian message signal, unit standard deviation."""
    warm = len(_AUDIO_LP)
    raw = rng.normal(size=length + 2 * warm)
    filt = np.convolve(raw, _AUDIO_LP, mode="same")[warm : warm + length]
    sd = filt.std()
    return filt / sd if sd > 0 else filt


def modulate(scheme: ModulationScheme, payload_seed: int, length: int) -> np.ndarray:
    """Unit-average-power complex baseband sequence for one scheme.

    Digital schemes draw uniform random symbols; analog schemes modulate a
    band-limited Gaussian message. Deterministic in payload_seed.
    """
    if length < 1:
        raise ContractError("modulate: length must be >= 1")
    scheme = ModulationScheme(scheme)
    rng = stream(payload_seed)
    sps = SAMPLES_PER_SYMBOL
    n_sym = length // sps + 2 * RRC_SPAN + 2
    if scheme in DIGITAL_LINEAR:
        const = CONSTELLATIONS[scheme]
        symbols = const[rng.integers(0, len(const), size=n_sym)]
        out = pulse_shape(symbols, length)
    elif scheme in (ModulationScheme.GFSK, ModulationScheme.CPFSK):
        bits = rng.integers(0, 2, size=n_sym) * 2.0 - 1.0
        nrz = np.repeat(bits, sps)
        if scheme is ModulationScheme.GFSK:
            sigma = math.sqrt(math.log(2)) / (2 * np.pi * GFSK_BT) * sps
            k = np.arange(-2 * sps, 2 * sps + 1, dtype=np.float64)
            g = np.exp(-0.5 * (k / sigma) ** 2)
            g /= g.sum()
            nrz = np.convolve(nrz, g, mode="same")
        phase = np.pi * FSK_MOD_INDEX * np.cumsum(nrz) / sps
        out = np.exp(1j * phase)[:length]
    elif scheme is ModulationScheme.WBFM:
        a = audio_source(rng, length)
        phase = 2 * np.pi * FM_DEVIATION * np.cumsum(a)
        out = np.exp(1j * phase)
    elif scheme is ModulationScheme.AM_DSB:
        a = audio_source(rng, length)
        out = (1.0 + 0.5 * a).astype(np.complex128)
    elif scheme is ModulationScheme.AM_SSB:
        a = audio_source(rng, length)
        spec = np.fft.fft(a)
        half = length // 2
        spec[half + 1 :] = 0  # keep the upper sideband only
        spec[1:half] *= 2
        out = np.fft.ifft(spec)
    else:  # pragma: no cover
        raise ContractError(f"unhandled scheme {scheme}")
    power = np.mean(np.abs(out) ** 2)
    return out / np.sqrt(power)


DEFAULT_FADING_TAPS = ((1.0, 0), (10 ** (-3 / 20), 1), (10 ** (-6 / 20), 2))


@dataclass
class ChannelConfig:
    """Impairment parameters; snr_db=inf disables the noise term."""

    snr_db: float = 10.0
    freq_offset_std: float = 1e-4
    srate_offset_std: float = 1e-4
    fading_taps: tuple = DEFAULT_FADING_TAPS
    seed: int = 0

    def __post_init__(self):
        if len(self.fading_taps) < 1:
            raise ContractError("fading_taps must contain at least one tap")
        if self.fading_taps[0][0] == 0:
            raise ContractError("first fading tap must be nonzero")


def _impair(signal: np.ndarray, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Fading + frequency/sample-rate offsets (no normalization, no noise)."""
    n = len(signal)
    out = np.zeros(n, dtype=np.complex128)
    for i, (mag, delay) in enumerate(cfg.fading_taps):
        # absolute phase is unobservable: keep the first tap real
        phase = 0.0 if i == 0 else rng.uniform(0, 2 * np.pi)
        tap = mag * np.exp(1j * phase)
        if delay == 0:
            out += tap * signal
        else:
            out[delay:] += tap * signal[:-delay]
    df = rng.normal(0.0, cfg.freq_offset_std)
    if df != 0.0:
        out = out * np.exp(2j * np.pi * df * np.arange(n))
    dr = rng.normal(0.0, cfg.srate_offset_std)
    if dr != 0.0:
        pos = np.clip(np.arange(n) * (1.0 + dr), 0, n - 1)
        base = np.arange(n, dtype=np.float64)
        out = np.interp(pos, base, out.real) + 1j * np.interp(pos, base, out.imag)
    return out


def noise_power(snr_db: float) -> float:
    return 0.0 if math.isinf(snr_db) else 10.0 ** (-snr_db / 10.0)


def apply_channel(signal: np.ndarray, cfg: ChannelConfig) -> np.ndarray:
    """Faded/offset signal, renormalized to unit RMS, plus AWGN at snr_db.

    With a single unit tap, zero offset widths and snr_db=inf this is the
    identity (the received sequence equals the transmitted one).
    """
    rng = stream(cfg.seed)
    out = _impair(np.asarray(signal, dtype=np.complex128), cfg, rng)
    rms = np.sqrt(np.mean(np.abs(out) ** 2))
    if rms > 0:
        out = out / rms
    n0 = noise_power(cfg.snr_db)
    if n0 > 0.0:
        sigma = math.sqrt(n0 / 2.0)
        out = out + sigma * (rng.normal(size=len(out)) + 1j * rng.normal(size=len(out)))
    return out
