"""PCI detection in folded (post-detector) traces.

A squared preamble frame retains a data-free window holding the folded
SSS and PSS symbols. Correlating a 504-entry bank of such windows against a
stacked trace identifies cells and their coarse sample delays. Squaring
destroys the sign difference between Zadoff-Chu roots 29 and 34, so their
folded waveforms coincide and stage-1 scanning needs only two PSS shapes.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .frontend import FrontEndConfig, fold_baseband
from .lte import FrameConfig, Pci, frame_samples

DETECTOR_RATE_HZ = 1.92e6
FRAME_LEN = 19200             # 10 ms at the detector rate
HALF_FRAME = 9600             # sync repeats every 5 ms
TEMPLATE_START = 684          # window start within a slot-aligned frame
TEMPLATE_LEN = 276            # two tail samples + SSS symbol + PSS symbol
PSS_TEMPLATE_LEN = 138        # trailing CP + PSS portion of the window

_EPS = 1e-30


@dataclass(frozen=True)
class FoldedTemplate:
    """One PCI's folded sync window.

    samples are mean-removed and unit-normalized; norm holds the L2 norm
    the window had before normalization, which carries the absolute folded
    amplitude scale (proportional to received amplitude squared).
    """

    pci: Pci
    samples: np.ndarray = field(repr=False)
    norm: float = 1.0


@dataclass
class Detection:
    pci: Pci
    delay_samples: int            # index where the folded sync window starts
    score: float
    amplitude: float = 0.0
    subsample_offset: float = 0.0


class BankMismatchError(RuntimeError):
    """Front-end config of a trace does not match the template bank."""


@dataclass
class TemplateBank:
    templates: list[FoldedTemplate]
    unique_pss_folded: np.ndarray = field(repr=False)   # (2, 138) raw windows
    config_key: str = ""
    _matrix: np.ndarray | None = field(default=None, repr=False)
    _pss_unit: np.ndarray | None = field(default=None, repr=False)
    _rfft_cache: dict = field(default_factory=dict, repr=False)

    @property
    def matrix(self) -> np.ndarray:
        """(504, 276) array of normalized template samples."""
        if self._matrix is None:
            self._matrix = np.stack([t.samples for t in self.templates])
        return self._matrix

    @property
    def pss_unit(self) -> np.ndarray:
        """(2, 138) mean-removed unit-norm PSS scan templates."""
        if self._pss_unit is None:
            w = self.unique_pss_folded - \
                self.unique_pss_folded.mean(axis=1, keepdims=True)
            self._pss_unit = w / np.linalg.norm(w, axis=1, keepdims=True)
        return self._pss_unit

    def template_rfft(self, n: int) -> np.ndarray:
        """Conjugate spectra of all templates zero-padded to n, cached."""
        if n not in self._rfft_cache:
            self._rfft_cache[n] = np.conj(np.fft.rfft(self.matrix, n=n, axis=1))
        return self._rfft_cache[n]


def _fold_preamble(pci: int, fe: FrontEndConfig) -> np.ndarray:
    cfg = FrameConfig.from_bandwidth(1.4)
    quiet = replace(fe, noise_sigma=0.0)
    return fold_baseband(frame_samples(cfg, pci, "none"),
                         cfg.sample_rate_hz, quiet)


def build_bank(fe: FrontEndConfig, cache_dir: str | None = None) -> TemplateBank:
    """Materialize all 504 folded sync templates through the ideal front end.

    Deterministic for a given front-end config; cache_dir (or the
    FOLDLOC_CACHE_DIR environment variable) enables an npz disk cache keyed
    by a hash of the filter parameters.
    """
    if abs(fe.adc_rate_hz - DETECTOR_RATE_HZ) > 1e-6:
        raise ValueError("template bank arithmetic requires a 1.92 MHz ADC rate")
    cache_dir = cache_dir or os.environ.get("FOLDLOC_CACHE_DIR")
    key = fe.key()
    cache_path = None
    if cache_dir:
        digest = hashlib.sha256(key.encode()).hexdigest()[:12]
        cache_path = os.path.join(cache_dir, f"bank_{digest}.npz")
        if os.path.exists(cache_path):
            with np.load(cache_path, allow_pickle=False) as z:
                if str(z["key"]) == key:
                    tpls = [FoldedTemplate(Pci(p), z["samples"][p], float(z["norms"][p]))
                            for p in range(504)]
                    return TemplateBank(tpls, z["pss_raw"], config_key=key)

    samples = np.empty((504, TEMPLATE_LEN))
    norms = np.empty(504)
    pss_raw = np.empty((2, PSS_TEMPLATE_LEN))
    for p in range(504):
        y = _fold_preamble(p, fe)
        w = y[TEMPLATE_START:TEMPLATE_START + TEMPLATE_LEN]
        w0 = w - w.mean()
        norms[p] = np.linalg.norm(w0)
        samples[p] = w0 / norms[p]
        if p < 2:
            # sectors 0 and 1 of group 0; root 34 (sector 2) folds
            # identically to root 29 and needs no third entry
            pss_raw[p] = w[-PSS_TEMPLATE_LEN:]

    if cache_path:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(cache_path, samples=samples, norms=norms, pss_raw=pss_raw, key=key)

    tpls = [FoldedTemplate(Pci(p), samples[p], float(norms[p])) for p in range(504)]
    return TemplateBank(tpls, pss_raw, config_key=key)


def stack_frames(trace: np.ndarray, n_frames: int,
                 frame_len: int = FRAME_LEN) -> np.ndarray:
    """Element-wise mean of n_frames consecutive frame-length windows.

    Sync content repeats each frame and reinforces; payload and noise
    average down, improving peak SNR by about sqrt(n) in amplitude.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if trace.size < n_frames * frame_len:
        raise ValueError(f"trace of {trace.size} samples too short for "
                         f"{n_frames} frames of {frame_len}")
    return trace[:n_frames * frame_len].reshape(n_frames, frame_len).mean(axis=0)


def _window_stats(x: np.ndarray, wlen: int) -> tuple[np.ndarray, np.ndarray]:
    """Circular sliding sum and sum of squares over windows of wlen."""
    ext = np.concatenate([x, x[:wlen - 1]])
    c1 = np.concatenate([[0.0], np.cumsum(ext)])
    c2 = np.concatenate([[0.0], np.cumsum(ext * ext)])
    idx = np.arange(x.size)
    s1 = c1[idx + wlen] - c1[idx]
    s2 = c2[idx + wlen] - c2[idx]
    return s1, s2


def _valid_windows(denom: np.ndarray) -> np.ndarray:
    """Mask of windows with enough variance for a meaningful score.

    Flat windows (constant signal, zero padding) have a vanishing
    denominator; dividing FFT round-off by it would fabricate full-scale
    scores.  The cut is relative to the largest window so scaling the
    trace never changes the mask.
    """
    return denom > 1e-9 * max(float(denom.max()), _EPS)


def _ncc(x: np.ndarray, tpl: np.ndarray) -> np.ndarray:
    """Circular zero-mean NCC of a unit-norm zero-mean template against x."""
    n = x.size
    wlen = tpl.size
    num = np.fft.irfft(np.fft.rfft(x) * np.conj(np.fft.rfft(tpl, n=n)), n=n)
    s1, s2 = _window_stats(x, wlen)
    denom = np.sqrt(np.maximum(s2 - s1 * s1 / wlen, 0.0))
    return np.where(_valid_windows(denom), num / np.maximum(denom, _EPS), 0.0)


def _phat(x: np.ndarray, tpl: np.ndarray, floor: float = 0.05) -> np.ndarray:
    """Phase-transform correlation restricted to the template's own band.

    The cross spectrum is whitened to unit magnitude on bins where the
    template holds at least `floor` of its peak magnitude and zeroed
    elsewhere; narrowband interference then contributes at most its few
    bins' worth of weight instead of dominating the metric.
    """
    n = x.size
    spec_t = np.fft.rfft(tpl, n=n)
    mag_t = np.abs(spec_t)
    keep = mag_t > floor * mag_t.max()
    keep[0] = False
    r = np.fft.rfft(x) * np.conj(spec_t)
    w = np.where(keep, r / np.maximum(np.abs(r), _EPS), 0.0)
    return np.fft.irfft(w, n=n) / (np.count_nonzero(keep) / (n / 2.0))


def correlate(stacked: np.ndarray, tpl: FoldedTemplate | np.ndarray,
              mode: str = "plain") -> np.ndarray:
    """Score every circular lag of one template against a stacked frame.

    plain: normalized cross-correlation with per-window mean removal and
    variance normalization. phat: whitened cross-spectrum phase correlation.
    Both return one score per lag, clipped to [-1, 1].
    """
    t = tpl.samples if isinstance(tpl, FoldedTemplate) else np.asarray(tpl)
    if stacked.size < t.size:
        raise ValueError("trace shorter than template")
    if mode == "plain":
        scores = _ncc(stacked, t)
    elif mode == "phat":
        scores = _phat(stacked, t)
    else:
        raise ValueError(f"unknown correlation mode {mode!r}")
    return np.clip(scores, -1.0, 1.0)


def correlate_bank(stacked: np.ndarray, bank: TemplateBank,
                   mode: str = "plain", chunk: int = 72) -> np.ndarray:
    """(504, n) score array of the full bank against one stacked frame.

    Vectorized equivalent of calling correlate per template; plain mode
    shares one window-statistics pass across all templates.
    """
    n = stacked.size
    if mode == "plain":
        spec_x = np.fft.rfft(stacked)
        s1, s2 = _window_stats(stacked, TEMPLATE_LEN)
        denom = np.maximum(np.sqrt(np.maximum(s2 - s1 * s1 / TEMPLATE_LEN, 0.0)), _EPS)
        out = np.empty((504, n))
        conj_t = bank.template_rfft(n)
        for lo in range(0, 504, chunk):
            hi = min(lo + chunk, 504)
            num = np.fft.irfft(spec_x[None, :] * conj_t[lo:hi], n=n, axis=1)
            out[lo:hi] = num / denom[None, :]
        out[:, ~_valid_windows(denom)] = 0.0
        return np.clip(out, -1.0, 1.0)
    if mode == "phat":
        return np.stack([correlate(stacked, t, "phat") for t in bank.templates])
    raise ValueError(f"unknown correlation mode {mode!r}")


def _stage1_candidates(stacked: np.ndarray, bank: TemplateBank,
                       thresh_pss: float, group_gap: int = 8) -> list[int]:
    """Peak indices from scanning the two folded PSS shapes."""
    cands = []
    for k in range(bank.pss_unit.shape[0]):
        scores = _ncc(stacked, bank.pss_unit[k])
        above = np.flatnonzero(scores > thresh_pss)
        if above.size == 0:
            continue
        run = [above[0]]
        for i in above[1:]:
            if i - run[-1] > group_gap:
                cands.append(run[np.argmax(scores[run])])
                run = [i]
            else:
                run.append(i)
        cands.append(run[np.argmax(scores[run])])
    return sorted(set(cands))


def hierarchical_detect(stacked: np.ndarray, bank: TemplateBank,
                        thresh_pss: float = 0.3, thresh_sss: float = 0.5,
                        candidate_window: int = 3) -> list[Detection]:
    """Two-stage search: PSS scan for candidate lags, full bank only there.

    Stage 1 scans all lags with the two folded PSS waveforms and keeps
    grouped peaks above thresh_pss. Stage 2 evaluates all 504 full
    templates at each candidate's implied window start (PSS peak minus the
    PSS-template offset) within +-candidate_window lags, keeping per-PCI
    bests above thresh_sss. Detections are enriched with a fitted amplitude
    and sub-sample offset, then returned sorted by score descending.
    """
    from .amplitude import estimate_subsample, fit_amplitude   # avoid cycle

    n = stacked.size
    dets: dict[int, Detection] = {}
    for pk in _stage1_candidates(stacked, bank, thresh_pss):
        base = pk - (TEMPLATE_LEN - PSS_TEMPLATE_LEN)
        for lag in range(base - candidate_window, base + candidate_window + 1):
            w = stacked.take(range(lag, lag + TEMPLATE_LEN), mode="wrap")
            w0 = w - w.mean()
            nrm = np.linalg.norm(w0)
            if nrm < _EPS:
                continue
            scores = bank.matrix @ (w0 / nrm)
            for p in np.flatnonzero(scores > thresh_sss):
                lag_n = lag % n
                if p not in dets or scores[p] > dets[p].score:
                    dets[p] = Detection(Pci(int(p)), lag_n, float(scores[p]))
    out = []
    for det in dets.values():
        tpl = bank.templates[det.pci.value]
        det.amplitude = fit_amplitude(stacked, tpl, det.delay_samples).amplitude
        det.subsample_offset = estimate_subsample(
            stacked, tpl, det.delay_samples).tau
        out.append(det)
    out.sort(key=lambda d: (-d.score, d.delay_samples, d.pci.value))
    return out


def suppress_false_positives(raw: list[Detection],
                             delay_cluster_radius: int = 5,
                             period: int = HALF_FRAME) -> list[Detection]:
    """Keep only the highest-amplitude detection per delay cluster.

    Delays are clustered modulo the sync repetition period: the same
    emission epoch surfaces at d and d + period, and near-miss templates
    (notably half-sequence aliases) score there too. Sorting survivors by
    score descending.
    """
    if not raw:
        return []
    keyed = sorted(raw, key=lambda d: d.delay_samples % period)
    clusters: list[list[Detection]] = [[keyed[0]]]
    for det in keyed[1:]:
        prev = clusters[-1][-1].delay_samples % period
        if det.delay_samples % period - prev <= delay_cluster_radius:
            clusters[-1].append(det)
        else:
            clusters.append([det])
    # modulo wrap: last cluster may adjoin the first
    if len(clusters) > 1:
        first = clusters[0][0].delay_samples % period
        last = clusters[-1][-1].delay_samples % period
        if first + period - last <= delay_cluster_radius:
            clusters[0] = clusters.pop() + clusters[0]
    out = [max(c, key=lambda d: d.amplitude) for c in clusters]
    out.sort(key=lambda d: (-d.score, d.delay_samples, d.pci.value))
    return out


def write_detections_csv(path, detections: list[Detection]) -> None:
    with open(path, "w") as f:
        f.write("pci,delay_samples,subsample_offset,amplitude,score\n")
        for d in detections:
            f.write(f"{d.pci.value},{d.delay_samples},{d.subsample_offset:.6f},"
                    f"{d.amplitude:.6g},{d.score:.6f}\n")


def read_detections_csv(path) -> list[Detection]:
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "pci,delay_samples,subsample_offset,amplitude,score":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            pci, delay, sub, amp, score = line.strip().split(",")
            out.append(Detection(Pci(int(pci)), int(delay), float(score),
                                 float(amp), float(sub)))
    return out
