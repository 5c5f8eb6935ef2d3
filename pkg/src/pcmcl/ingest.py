"""ICBHI-format ingestion and a synthetic desk-scale dataset generator.

On-disk layout (one directory)::

    <recording_id>.wav              RIFF/WAVE PCM, mono or stereo
    <recording_id>.txt              rows "start end crackle wheeze"
    ICBHI_challenge_train_test.txt  rows "recording_id<TAB>train|test"

The patient id is the first underscore-delimited token of the recording id,
e.g. ``101`` for ``101_1b1_Al_sc_Meditron``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import butter, sosfilt

from .features import SAMPLE_RATE, resample_to_16k
from .labels import IcbhiClass, Label3, PatientId, class_label

logger = logging.getLogger(__name__)

SPLIT_FILENAME = "ICBHI_challenge_train_test.txt"
MANIFEST_FIELDS = ["cycle_id", "recording_id", "patient_id", "split", "n", "c", "w", "duration_s"]
SPLITS = ("train", "test")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    patient_id: PatientId
    sample_rate: int
    split: str | None = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split tag {self.split!r}")

    @classmethod
    def from_filename(cls, name: str, sample_rate: int, split: str | None = None) -> "RecordingMeta":
        rec = Path(name).stem
        return cls(rec, patient_id_from_recording(rec), sample_rate, split)


@dataclass(frozen=True)
class CycleAnnotation:
    start_s: float
    end_s: float
    crackle: int
    wheeze: int

    def __post_init__(self):
        if self.start_s < 0:
            raise ValueError("start before 0")
        if self.end_s <= self.start_s:
            raise ValueError("end before start")
        if self.crackle not in (0, 1) or self.wheeze not in (0, 1):
            raise ValueError("crackle/wheeze flags must be 0 or 1")

    @property
    def label(self) -> Label3:
        return Label3.from_annotation(self.crackle, self.wheeze)


@dataclass(eq=False)
class RespiratoryCycle:
    samples: np.ndarray
    sample_rate: int
    label: Label3
    patient: PatientId
    recording_id: str
    index: int
    split: str | None = None

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError(f"cycle {self.cycle_id} has no samples")

    @property
    def cycle_id(self) -> str:
        return f"{self.recording_id}:{self.index:03d}"

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def patient_id_from_recording(recording_id: str) -> PatientId:
    token = Path(recording_id).stem.split("_")[0]
    if not token:
        raise IngestError(f"cannot derive a patient id from {recording_id!r}")
    return token


def parse_annotation_file(text: str) -> list[CycleAnnotation]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        cols = line.split()
        if not cols:
            continue
        if len(cols) != 4:
            raise IngestError(f"line {lineno}: expected 4 columns, got {len(cols)}")
        try:
            start, end = float(cols[0]), float(cols[1])
            crackle, wheeze = int(cols[2]), int(cols[3])
        except ValueError:
            raise IngestError(f"line {lineno}: non-numeric field in {line.strip()!r}") from None
        try:
            rows.append(CycleAnnotation(start, end, crackle, wheeze))
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from None
    return rows


def parse_split_file(text: str) -> dict[str, str]:
    split: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        cols = line.split()
        if not cols:
            continue
        if len(cols) != 2:
            raise IngestError(f"line {lineno}: expected 'recording_id<TAB>split', got {line.strip()!r}")
        rec, tag = cols
        if tag not in SPLITS:
            raise IngestError(f"line {lineno}: unknown split tag {tag!r}")
        if rec in split:
            raise IngestError(f"line {lineno}: duplicate recording id {rec!r}")
        split[rec] = tag
    return split


def slice_cycles(
    waveform: np.ndarray, meta: RecordingMeta, annotations: Sequence[CycleAnnotation]
) -> list[RespiratoryCycle]:
    """Cut a recording into labelled cycles.

    Bounds are ``round(start * sr) .. round(end * sr)``, clamped to the
    recording; cycles that are empty after clamping are dropped.
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    n = len(waveform)
    sr = meta.sample_rate
    cycles = []
    for i, ann in enumerate(annotations):
        lo, hi = int(round(ann.start_s * sr)), int(round(ann.end_s * sr))
        if hi > n or lo > n:
            logger.warning("%s cycle %d: annotation %.3f-%.3f s overruns %.3f s recording; clamped",
                           meta.recording_id, i, ann.start_s, ann.end_s, n / sr)
            lo, hi = min(lo, n), min(hi, n)
        if hi <= lo:
            logger.warning("%s cycle %d: empty after clamping; dropped", meta.recording_id, i)
            continue
        cycles.append(RespiratoryCycle(
            samples=waveform[lo:hi].copy(),
            sample_rate=sr,
            label=ann.label,
            patient=meta.patient_id,
            recording_id=meta.recording_id,
            index=i,
            split=meta.split,
        ))
    return cycles


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file as float64 mono samples in [-1, 1]."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise IngestError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(sr)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write 16-bit PCM mono."""
    q = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, sample_rate, q)


def load_recording(wav_path: str | Path, annotation_text: str, split: str | None = None) -> list[RespiratoryCycle]:
    x, sr = read_wav(wav_path)
    if sr != SAMPLE_RATE:
        x = resample_to_16k(x, sr)
    meta = RecordingMeta.from_filename(Path(wav_path).name, SAMPLE_RATE, split)
    return slice_cycles(x, meta, parse_annotation_file(annotation_text))


def load_icbhi_dir(root: str | Path, split_file: str | Path | None = None) -> list[RespiratoryCycle]:
    """Ingest every annotated recording under ``root``, ordered by recording id."""
    root = Path(root)
    split_path = Path(split_file) if split_file is not None else root / SPLIT_FILENAME
    split = parse_split_file(split_path.read_text()) if split_path.exists() else {}
    cycles: list[RespiratoryCycle] = []
    wavs = sorted(root.glob("*.wav"), key=lambda p: p.stem)
    if not wavs:
        raise IngestError(f"no .wav recordings under {root}")
    for wav in wavs:
        ann = wav.with_suffix(".txt")
        if not ann.exists():
            logger.warning("%s has no annotation file; skipped", wav.name)
            continue
        if split and wav.stem not in split:
            raise IngestError(f"{wav.stem} missing from split file {split_path.name}")
        cycles.extend(load_recording(wav, ann.read_text(), split.get(wav.stem)))
    return cycles


def write_icbhi_dir(cycles: Sequence[RespiratoryCycle], root: str | Path) -> None:
    """Write cycles back out as recordings (cycles of one recording back to back)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    recordings: dict[str, list[RespiratoryCycle]] = {}
    for c in cycles:
        recordings.setdefault(c.recording_id, []).append(c)
    split_rows = []
    for rec in sorted(recordings):
        parts = sorted(recordings[rec], key=lambda c: c.index)
        sr = parts[0].sample_rate
        rows, pos = [], 0
        for c in parts:
            end = pos + len(c.samples)
            rows.append(f"{pos / sr:.6f}\t{end / sr:.6f}\t{c.label.crackle}\t{c.label.wheeze}\n")
            pos = end
        write_wav(root / f"{rec}.wav", np.concatenate([c.samples for c in parts]), sr)
        (root / f"{rec}.txt").write_text("".join(rows))
        if parts[0].split is not None:
            split_rows.append(f"{rec}\t{parts[0].split}\n")
    if split_rows:
        (root / SPLIT_FILENAME).write_text("".join(split_rows))
    write_manifest(cycles, root / "manifest.csv")


def write_manifest(cycles: Iterable[RespiratoryCycle], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for c in cycles:
            w.writerow([c.cycle_id, c.recording_id, c.patient, c.split or "", *c.label,
                        f"{c.duration_s:.6f}"])


def read_manifest(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["label"] = Label3.of([int(r["n"]), int(r["c"]), int(r["w"])])
    return rows


def check_patient_disjoint(cycles: Iterable[RespiratoryCycle]) -> None:
    seen: dict[str, set[str]] = {}
    for c in cycles:
        seen.setdefault(c.patient, set()).add(c.split or "")
    leaked = sorted(p for p, s in seen.items() if {"train", "test"} <= s)
    if leaked:
        raise IngestError(f"patients present in both splits: {leaked}")


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for a synthetic dataset.

    ``class_mix`` gives the probabilities of Normal, Crackle, Wheeze and Both.
    ``snr_db`` sets the level of the pathology overlays relative to the
    breathing noise; ``test_fraction`` of the patients go to the test split.
    """

    n_patients: int = 40
    cycles_per_patient: int = 12
    class_mix: tuple[float, float, float, float] = (0.5, 0.25, 0.15, 0.1)
    patient_signature_strength: float = 1.0
    snr_db: float = 0.0
    test_fraction: float = 0.4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_mix", tuple(float(p) for p in self.class_mix))
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if self.cycles_per_patient < 1:
            raise ValueError("cycles_per_patient must be >= 1")
        if len(self.class_mix) != 4 or min(self.class_mix) < 0:
            raise ValueError("class_mix must be four non-negative probabilities")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix must sum to 1, got {sum(self.class_mix)!r}")
        if self.patient_signature_strength < 0:
            raise ValueError("patient_signature_strength must be >= 0")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")


MIN_CYCLE_S = 1.0
MAX_CYCLE_S = 4.0
_RMS_TARGET = 0.1
_BREATH_SOS = butter(4, [100.0, 1500.0], btype="bandpass", fs=SAMPLE_RATE, output="sos")


def patient_filter(n: int, coefs: np.ndarray, strength: float) -> np.ndarray:
    """Smooth log-frequency gain curve (tilt and curvature) for an n-sample rfft."""
    f = np.maximum(np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE), 50.0)
    u = np.log2(f / 1000.0) / 3.0
    basis = np.stack([u, u**2 - 1.0 / 3.0, u**3])
    return np.exp(strength * (coefs @ basis))


def _breath_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    noise = sosfilt(_BREATH_SOS, rng.standard_normal(n))
    noise /= np.sqrt(np.mean(noise**2))
    t = np.arange(n) / n
    return noise * (0.4 + 0.6 * np.sin(np.pi * t) ** 2)


def _crackles(rng: np.random.Generator, n: int, amp: float) -> np.ndarray:
    out = np.zeros(n)
    n_clicks = max(3, rng.poisson(rng.uniform(8.0, 16.0) * n / SAMPLE_RATE))
    for onset in rng.integers(0, n, size=n_clicks):
        dur = int(rng.uniform(0.003, 0.008) * SAMPLE_RATE)
        t = np.arange(min(dur, n - onset)) / SAMPLE_RATE
        freq = rng.uniform(300.0, 1200.0)
        click = np.sin(2 * np.pi * freq * t) * np.exp(-t / rng.uniform(0.001, 0.002))
        out[onset:onset + len(t)] += amp * rng.uniform(2.0, 4.0) * click
    return out


def _wheeze(rng: np.random.Generator, n: int, amp: float) -> np.ndarray:
    f0 = rng.uniform(200.0, 800.0)
    span = int(n * rng.uniform(0.5, 0.9))
    start = int(rng.integers(0, n - span + 1))
    t = np.arange(span) / SAMPLE_RATE
    drift = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t)
    phase = 2 * np.pi * f0 * np.cumsum(drift) / SAMPLE_RATE
    tone = np.sin(phase) + 0.3 * np.sin(2 * phase)
    fade = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.05)
    out = np.zeros(n)
    out[start:start + span] = amp * np.sqrt(2) * tone * fade
    return out


def synth_cycle(rng: np.random.Generator, cls: IcbhiClass, n: int, amp: float,
                gain: np.ndarray | None) -> np.ndarray:
    x = _breath_noise(rng, n)
    if cls in (IcbhiClass.CRACKLE, IcbhiClass.BOTH):
        x = x + _crackles(rng, n, amp)
    if cls in (IcbhiClass.WHEEZE, IcbhiClass.BOTH):
        x = x + _wheeze(rng, n, amp)
    if gain is not None:
        x = np.fft.irfft(np.fft.rfft(x) * gain, n=n)
    x *= _RMS_TARGET / np.sqrt(np.mean(x**2))
    # 16-bit grid so the dataset survives a WAV round trip unchanged
    return np.clip(np.round(x * 32768.0), -32768, 32767) / 32768.0


def synth_generate(cfg: SynthConfig) -> list[RespiratoryCycle]:
    """Deterministic synthetic cycles, patient-disjointly split into train/test."""
    root = np.random.SeedSequence(cfg.seed)
    split_seq, *patient_seqs = root.spawn(cfg.n_patients + 1)
    n_test = int(round(cfg.test_fraction * cfg.n_patients))
    order = np.random.default_rng(split_seq).permutation(cfg.n_patients)
    test_patients = set(order[:n_test].tolist())
    amp = 10.0 ** (cfg.snr_db / 20.0)
    classes = list(IcbhiClass)

    cycles = []
    for p, seq in enumerate(patient_seqs):
        rng = np.random.default_rng(seq)
        pid = str(101 + p)
        rec = f"{pid}_1b1_Al_sc_Synth"
        split = "test" if p in test_patients else "train"
        coefs = rng.normal(size=3)
        for i in range(cfg.cycles_per_patient):
            cls = classes[rng.choice(4, p=cfg.class_mix)]
            n = int(rng.integers(int(MIN_CYCLE_S * SAMPLE_RATE), int(MAX_CYCLE_S * SAMPLE_RATE) + 1))
            gain = patient_filter(n, coefs, cfg.patient_signature_strength) \
                if cfg.patient_signature_strength > 0 else None
            cycles.append(RespiratoryCycle(
                samples=synth_cycle(rng, cls, n, amp, gain),
                sample_rate=SAMPLE_RATE,
                label=class_label(cls),
                patient=pid,
                recording_id=rec,
                index=i,
                split=split,
            ))
    return cycles


def split_cycles(cycles: Iterable[RespiratoryCycle]) -> tuple[list[RespiratoryCycle], list[RespiratoryCycle]]:
    cycles = list(cycles)
    return [c for c in cycles if c.split == "train"], [c for c in cycles if c.split == "test"]
