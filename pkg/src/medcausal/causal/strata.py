"""Pyramid stratification of nonzero effect pairs into relevance layers.

Layer 1 is the broad base and layer ``n`` the sparse top. Sizes follow a
geometric series ``s_j = s_1 * K**(j-1)`` whose sum is the number of nonzero
pairs; the strongest pairs fill the top layer first.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ehr import Vocabulary
from ..errors import ConfigError, DataFormatError
from .effects import CausalEffectMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelevanceStrata:
    """``layers[s, m]`` is the layer (1..n) of pair (s, m), 0 for pairs without an effect."""

    source_kind: str
    n: int
    K: float
    layers: np.ndarray
    relevance: np.ndarray  # length n, entry j-1 is r_j; 0 for an empty layer

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=np.int64)
        rel = np.asarray(self.relevance, dtype=np.float64)
        if rel.shape != (self.n,):
            raise ValueError("one relevance value per layer is required")
        if layers.min(initial=0) < 0 or layers.max(initial=0) > self.n:
            raise ValueError("layer index out of range")
        layers.setflags(write=False)
        rel.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "relevance", rel)

    def sizes(self) -> np.ndarray:
        return np.array([int(np.sum(self.layers == j)) for j in range(1, self.n + 1)])

    def relevance_of(self, source: int, med: int) -> float:
        j = int(self.layers[source, med])
        return float(self.relevance[j - 1]) if j else 0.0


def pyramid_sizes(total: int, n: int, K: float) -> np.ndarray:
    """Integer layer sizes (bottom to top) closest to the geometric series summing to ``total``.

    Rounding uses the largest-remainder rule. When ``total >= n`` every layer
    keeps at least one pair, taken from the largest layer, so the top layer is
    never empty. Fewer pairs than layers fill the bottom layers one pair each,
    keeping the sizes non-increasing.
    """
    if n < 2:
        raise ConfigError("stratification needs at least 2 layers")
    if not 0.0 < K < 1.0:
        raise ConfigError("the pyramid gradient K must lie in (0, 1)")
    if total <= 0:
        return np.zeros(n, dtype=np.int64)
    if total < n:
        sizes = np.zeros(n, dtype=np.int64)
        sizes[:total] = 1
        return sizes
    ratios = K ** np.arange(n)
    ideal = total * ratios / ratios.sum()
    sizes = np.floor(ideal + 1e-9).astype(np.int64)
    short = total - int(sizes.sum())
    order = np.lexsort((np.arange(n), -(ideal - sizes)))
    sizes[order[:short]] += 1
    while sizes.min() == 0:
        sizes[np.argmin(sizes)] = 1
        sizes[np.argmax(sizes)] -= 1
    return np.sort(sizes)[::-1].copy()


def stratify(effects: CausalEffectMatrix, n: int = 5, K: float = 1 / 3) -> RelevanceStrata:
    """Assign every nonzero effect pair to one of ``n`` pyramid layers.

    Pairs are ranked by effect, descending, with ties in row-major index
    order; the top layer ``n`` takes the first pairs. A layer's relevance is
    the mean effect of its members.
    """
    values = effects.values
    flat = values.ravel()
    nz = np.flatnonzero(flat > 0)
    sizes = pyramid_sizes(len(nz), n, K)
    if 0 < len(nz) < n:
        logger.warning("only %d nonzero pairs for %d layers; upper layers stay empty", len(nz), n)
    order = nz[np.argsort(-flat[nz], kind="stable")]
    layers = np.zeros(flat.shape, dtype=np.int64)
    relevance = np.zeros(n)
    start = 0
    for j in range(n, 0, -1):
        members = order[start:start + sizes[j - 1]]
        layers[members] = j
        if len(members):
            relevance[j - 1] = float(flat[members].mean())
        start += sizes[j - 1]
    return RelevanceStrata(effects.source_kind, n, K, layers.reshape(values.shape), relevance)


STRATA_HEADER = ["source", "medication", "effect", "layer"]


def write_strata(path: str | Path, strata: RelevanceStrata, effects: CausalEffectMatrix,
                 src_vocab: Vocabulary, med_vocab: Vocabulary) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# kind: {strata.source_kind}; n: {strata.n}; K: {strata.K!r}\n")
        fh.write("# relevance: " + " ".join(repr(float(r)) for r in strata.relevance) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STRATA_HEADER)
        for i, j in zip(*np.nonzero(strata.layers)):
            w.writerow([src_vocab.codes[i], med_vocab.codes[j],
                        repr(float(effects.values[i, j])), int(strata.layers[i, j])])


def read_strata(path: str | Path, src_vocab: Vocabulary, med_vocab: Vocabulary) -> RelevanceStrata:
    path = Path(path)
    meta: dict[str, str] = {}
    relevance = None
    layers = np.zeros((len(src_vocab), len(med_vocab)), dtype=np.int64)
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("# relevance:"):
                relevance = [float(x) for x in line.split(":", 1)[1].split()]
                continue
            if line.startswith("#"):
                for part in line[1:].split(";"):
                    key, _, val = part.partition(":")
                    meta[key.strip()] = val.strip()
                continue
            row = next(csv.reader([line]))
            if row == STRATA_HEADER:
                continue
            if len(row) != 4:
                raise DataFormatError("expected 4 columns", path, lineno)
            layers[src_vocab.lookup(row[0]), med_vocab.lookup(row[1])] = int(row[3])
    try:
        n, K, kind = int(meta["n"]), float(meta["K"]), meta["kind"]
    except KeyError as exc:
        raise DataFormatError(f"missing '{exc.args[0]}' in strata header", path) from None
    if relevance is None or len(relevance) != n:
        raise DataFormatError("relevance header does not list one value per layer", path)
    return RelevanceStrata(kind, n, K, layers, np.array(relevance))
