"""Spectrum containers, MGF / TSV readers and writers, and a naive b/y generator."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

OBSERVED = "observed"
THEORETICAL = "theoretical"

PROTON = 1.007276
WATER = 18.010565

# standard monoisotopic residue masses
RESIDUE_MASS = {
    "G": 57.02146, "A": 71.03711, "S": 87.03203, "P": 97.05276,
    "V": 99.06841, "T": 101.04768, "C": 103.00919, "L": 113.08406,
    "I": 113.08406, "N": 114.04293, "D": 115.02694, "Q": 128.05858,
    "K": 128.09496, "E": 129.04259, "M": 131.04049, "H": 137.05891,
    "F": 147.06841, "R": 156.10111, "Y": 163.06333, "W": 186.07931,
}


class SpectrumFormatError(ValueError):
    """Raised for malformed peak-list input; carries the offending line number."""

    def __init__(self, message: str, line: Optional[int] = None, block: Optional[str] = None):
        self.line = line
        self.block = block
        where = []
        if block is not None:
            where.append(f"block {block!r}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Peak:
    mz: float
    intensity: float

    def __post_init__(self):
        if not self.mz > 0:
            raise ValueError(f"peak m/z must be positive, got {self.mz}")
        if not self.intensity >= 0:
            raise ValueError(f"peak intensity must be nonnegative, got {self.intensity}")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Spectrum:
    """An immutable peak list. Peaks are kept sorted by ascending m/z.

    ``mz`` and ``intensity`` are read-only float arrays of equal length.
    Construction validates the model invariants (positive, pairwise distinct
    m/z and nonnegative intensities) and raises ``ValueError`` otherwise.
    """

    id: str
    charge: int
    mz: np.ndarray
    intensity: np.ndarray
    kind: str = OBSERVED
    precursor_mz: Optional[float] = None

    def __post_init__(self):
        mz = np.asarray(self.mz, dtype=np.float64).ravel()
        inten = np.asarray(self.intensity, dtype=np.float64).ravel()
        if mz.shape != inten.shape:
            raise ValueError("mz and intensity arrays differ in length")
        if self.kind not in (OBSERVED, THEORETICAL):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if int(self.charge) != self.charge or self.charge < 1:
            raise ValueError(f"charge must be a positive integer, got {self.charge}")
        if not np.all(np.isfinite(mz)) or np.any(mz <= 0):
            raise ValueError("peak m/z values must be finite and positive")
        if not np.all(np.isfinite(inten)) or np.any(inten < 0):
            raise ValueError("peak intensities must be finite and nonnegative")
        if self.precursor_mz is not None and not self.precursor_mz > 0:
            raise ValueError("precursor m/z must be positive")
        order = np.argsort(mz, kind="stable")
        mz, inten = mz[order], inten[order]
        dup = np.flatnonzero(np.diff(mz) == 0)
        if dup.size:
            raise ValueError(f"duplicate peak m/z {mz[dup[0]]!r}")
        object.__setattr__(self, "charge", int(self.charge))
        object.__setattr__(self, "mz", _frozen(mz))
        object.__setattr__(self, "intensity", _frozen(inten))

    def __len__(self) -> int:
        return self.mz.size

    @property
    def peaks(self) -> tuple[Peak, ...]:
        return tuple(Peak(float(x), float(y)) for x, y in zip(self.mz, self.intensity))

    def with_peaks(self, mz, intensity) -> "Spectrum":
        return Spectrum(self.id, self.charge, mz, intensity, self.kind, self.precursor_mz)

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            self.id == other.id
            and self.charge == other.charge
            and self.kind == other.kind
            and self.precursor_mz == other.precursor_mz
            and np.array_equal(self.mz, other.mz)
            and np.array_equal(self.intensity, other.intensity)
        )

    __hash__ = None


def _num(value: float) -> str:
    # repr is the shortest exact round-trip form
    return repr(float(value))


def _lines(text_or_path) -> list[str]:
    if isinstance(text_or_path, Path):
        return text_or_path.read_text().splitlines()
    return str(text_or_path).splitlines()


# --------------------------------------------------------------------- MGF


def _parse_charge(value: str, lineno: int, block: str) -> int:
    m = re.fullmatch(r"\s*(\d+)\s*\+?\s*", value)
    if not m or int(m.group(1)) < 1:
        raise SpectrumFormatError(f"bad CHARGE value {value!r}", lineno, block)
    return int(m.group(1))


def parse_observed(text) -> list[Spectrum]:
    """Parse an MGF-style document into observed spectra.

    Any defect in any block aborts the whole parse; partial results are
    never returned.
    """
    spectra = []
    block = None
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if block is None:
            if line.upper() == "BEGIN IONS":
                block = {"start": lineno, "title": None, "charge": None,
                         "pepmass": None, "mz": [], "intensity": [], "seen": {}}
                continue
            raise SpectrumFormatError(f"unexpected content outside BEGIN/END IONS: {line!r}", lineno)
        label = block["title"] or f"#{len(spectra) + 1}"
        if line.upper() == "END IONS":
            spectra.append(_close_block(block, lineno))
            block = None
            continue
        if line.upper() == "BEGIN IONS":
            raise SpectrumFormatError("nested BEGIN IONS", lineno, label)
        if "=" in line and not line[0].isdigit():
            key, _, value = line.partition("=")
            key = key.strip().upper()
            if key == "TITLE":
                block["title"] = value.strip()
            elif key == "CHARGE":
                block["charge"] = _parse_charge(value, lineno, label)
            elif key == "PEPMASS":
                try:
                    block["pepmass"] = float(value.split()[0])
                except (ValueError, IndexError):
                    raise SpectrumFormatError(f"bad PEPMASS value {value!r}", lineno, label) from None
            # other header keys are ignored
            continue
        fields = line.split()
        if len(fields) < 2:
            raise SpectrumFormatError(f"expected '<mz> <intensity>', got {line!r}", lineno, label)
        try:
            mz, inten = float(fields[0]), float(fields[1])
        except ValueError:
            raise SpectrumFormatError(f"non-numeric peak line {line!r}", lineno, label) from None
        if not (np.isfinite(mz) and mz > 0):
            raise SpectrumFormatError(f"peak m/z must be positive, got {fields[0]}", lineno, label)
        if not (np.isfinite(inten) and inten >= 0):
            raise SpectrumFormatError(f"peak intensity must be nonnegative, got {fields[1]}", lineno, label)
        if mz in block["seen"]:
            raise SpectrumFormatError(
                f"duplicate m/z {fields[0]} (first seen on line {block['seen'][mz]})", lineno, label)
        block["seen"][mz] = lineno
        block["mz"].append(mz)
        block["intensity"].append(inten)
    if block is not None:
        raise SpectrumFormatError("missing END IONS", block["start"], block["title"])
    return spectra


def _close_block(block: dict, lineno: int) -> Spectrum:
    label = block["title"] or f"starting line {block['start']}"
    if block["title"] is None:
        raise SpectrumFormatError("missing TITLE", block["start"], label)
    if block["charge"] is None:
        raise SpectrumFormatError("missing CHARGE", block["start"], label)
    if not block["mz"]:
        raise SpectrumFormatError("empty peak list", lineno, label)
    pm = block["pepmass"]
    if pm is not None and not pm > 0:
        raise SpectrumFormatError("PEPMASS must be positive", block["start"], label)
    return Spectrum(block["title"], block["charge"], block["mz"], block["intensity"],
                    OBSERVED, pm)


def format_observed(spectra: Iterable[Spectrum]) -> str:
    out = []
    for s in spectra:
        out.append("BEGIN IONS")
        out.append(f"TITLE={s.id}")
        out.append(f"CHARGE={s.charge}+")
        if s.precursor_mz is not None:
            out.append(f"PEPMASS={_num(s.precursor_mz)}")
        out.extend(f"{_num(x)} {_num(y)}" for x, y in zip(s.mz, s.intensity))
        out.append("END IONS")
        out.append("")
    return "\n".join(out)


# --------------------------------------------------------------------- TSV


def parse_theoretical(text) -> Spectrum:
    """Parse a theoretical spectrum TSV.

    Header lines start with ``#`` and hold ``key=value`` tokens (``id``,
    ``charge``, optionally ``precursor_mz``), either one per line or several
    on one line. An optional ``mz<TAB>intensity`` column header is skipped.
    """
    meta: dict[str, str] = {}
    mz, inten, seen = [], [], {}
    label = None
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                if "=" not in token:
                    raise SpectrumFormatError(f"malformed header token {token!r}", lineno)
                key, _, value = token.partition("=")
                meta[key.strip().lower()] = value.strip()
            label = meta.get("id", label)
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        if [f.strip().lower() for f in fields[:2]] == ["mz", "intensity"]:
            continue
        if len(fields) != 2:
            raise SpectrumFormatError(f"expected 2 tab-separated columns, got {line!r}", lineno, label)
        try:
            x, y = float(fields[0]), float(fields[1])
        except ValueError:
            raise SpectrumFormatError(f"non-numeric peak row {line!r}", lineno, label) from None
        if not (np.isfinite(x) and x > 0):
            raise SpectrumFormatError(f"peak m/z must be positive, got {fields[0]}", lineno, label)
        if not (np.isfinite(y) and y >= 0):
            raise SpectrumFormatError(f"peak intensity must be nonnegative, got {fields[1]}", lineno, label)
        if x in seen:
            raise SpectrumFormatError(f"duplicate m/z {fields[0]} (first seen on line {seen[x]})", lineno, label)
        seen[x] = lineno
        mz.append(x)
        inten.append(y)
    if "id" not in meta:
        raise SpectrumFormatError("missing '# id=' header")
    if "charge" not in meta:
        raise SpectrumFormatError("missing '# charge=' header", block=meta["id"])
    charge = _parse_charge(meta["charge"], 0, meta["id"])
    precursor = None
    if "precursor_mz" in meta:
        try:
            precursor = float(meta["precursor_mz"])
        except ValueError:
            raise SpectrumFormatError("bad precursor_mz header", block=meta["id"]) from None
    if not mz:
        raise SpectrumFormatError("empty peak list", block=meta["id"])
    return Spectrum(meta["id"], charge, mz, inten, THEORETICAL, precursor)


def format_theoretical(s: Spectrum) -> str:
    out = [f"# id={s.id}", f"# charge={s.charge}"]
    if s.precursor_mz is not None:
        out.append(f"# precursor_mz={_num(s.precursor_mz)}")
    out.append("mz\tintensity")
    out.extend(f"{_num(x)}\t{_num(y)}" for x, y in zip(s.mz, s.intensity))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------- files


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_observed(path) -> list[Spectrum]:
    return parse_observed(Path(path))


def read_theoretical(path) -> Spectrum:
    return parse_theoretical(Path(path))


def write_observed(path, spectra: Sequence[Spectrum]) -> None:
    atomic_write(path, format_observed(spectra))


def write_theoretical(path, spectrum: Spectrum) -> None:
    atomic_write(path, format_theoretical(spectrum))


# --------------------------------------------------------------------- naive b/y


def generate_naive_theoretical(sequence: str, charge: int = 1) -> Spectrum:
    """Singly charged b and y ladder with unit intensities.

    Only meant to make the pipeline runnable without an external
    fragmentation predictor. Coinciding fragment m/z values are merged with
    summed intensity.
    """
    seq = sequence.strip().upper()
    bad = sorted(set(seq) - RESIDUE_MASS.keys())
    if bad:
        raise ValueError(f"unknown residue letter(s) {''.join(bad)!r} in {sequence!r}")
    if len(seq) < 2:
        raise ValueError("sequence must have at least two residues")
    masses = np.array([RESIDUE_MASS[a] for a in seq])
    prefix = np.cumsum(masses)[:-1]
    suffix = np.cumsum(masses[::-1])[:-1]
    frags = np.concatenate([prefix + PROTON, suffix + WATER + PROTON])
    mz, counts = np.unique(frags, return_counts=True)
    precursor = (masses.sum() + WATER + charge * PROTON) / charge
    return Spectrum(seq, charge, mz, counts.astype(float), THEORETICAL, float(precursor))
