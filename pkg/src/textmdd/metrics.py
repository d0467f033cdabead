"""Hierarchical MDD scoring: alignment, TA/FR/FA/TR tallies, and rates.

Three-way alignment
-------------------
``align_triple`` first aligns canonical against annotation, then aligns the
hypothesis against the gap-free annotation, and merges the two alignments
on the shared annotation positions:

* every annotation phone yields one column ``(c, a, h)`` taking ``c`` from
  the first alignment and ``h`` from the second;
* between two consecutive annotation phones, the canonical-only columns of
  the first alignment (annotation deletions) and the hypothesis-only
  columns of the second (recognizer insertions) are zipped pairwise in
  order into ``(c, -, h)`` columns; leftovers become ``(c, -, -)`` or
  ``(-, -, h)``.

Columns of the form ``(-, -, h)`` are recognizer insertions with no
reference phone behind them. ``tally`` reports them separately so that the
canonical/mispronounced totals depend on the reference data only.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Hashable, Iterable, NamedTuple, Sequence

GAP = None

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"


class PairAlignment(NamedTuple):
    columns: list  # (a_or_GAP, b_or_GAP)
    ops: list
    distance: int


def align_pair(a: Sequence[Hashable], b: Sequence[Hashable]) -> PairAlignment:
    """Unit-cost Levenshtein alignment with a deterministic traceback.

    The traceback walks back from the end and prefers, in order, match,
    substitution, deletion (gap in ``b``) and insertion (gap in ``a``), so
    among equal-cost alignments the gaps land as far left as possible.
    """
    a, b = list(a), list(b)
    n, m = len(a), len(b)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev, ai = dist[i], dist[i - 1], a[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ai != b[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(diag, up, left)

    columns, ops = [], []
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and dist[i - 1][j - 1] == here:
            op = MATCH
        elif i > 0 and j > 0 and dist[i - 1][j - 1] + 1 == here:
            op = SUB
        elif i > 0 and dist[i - 1][j] + 1 == here:
            op = DEL
        else:
            op = INS
        if op in (MATCH, SUB):
            columns.append((a[i - 1], b[j - 1]))
            i, j = i - 1, j - 1
        elif op == DEL:
            columns.append((a[i - 1], GAP))
            i -= 1
        else:
            columns.append((GAP, b[j - 1]))
            j -= 1
        ops.append(op)
    columns.reverse()
    ops.reverse()
    return PairAlignment(columns, ops, dist[n][m])


def edit_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    return align_pair(a, b).distance


def _slots(columns, anchor):
    """Split pair-alignment columns around the non-gap entries of ``anchor`` side.

    Returns ``(extras, anchored)``: ``extras[j]`` lists the off-anchor values
    in the gap slot before anchor position ``j`` (``j == len`` is the tail),
    ``anchored[j]`` is the partner of anchor position ``j``.
    """
    extras, anchored, pending = [], [], []
    for col in columns:
        other = col[1 - anchor]
        if col[anchor] is GAP:
            pending.append(other)
        else:
            extras.append(pending)
            anchored.append(other)
            pending = []
    extras.append(pending)
    return extras, anchored


def align_triple(canonical: Sequence, annotation: Sequence, hypothesis: Sequence) -> list:
    """Merge canonical/annotation and annotation/hypothesis alignments into columns."""
    ca = align_pair(canonical, annotation)
    ah = align_pair(annotation, hypothesis)
    c_extra, c_at = _slots(ca.columns, anchor=1)
    h_extra, h_at = _slots(ah.columns, anchor=0)
    columns = []
    for j in range(len(annotation) + 1):
        dels, ins = c_extra[j], h_extra[j]
        for k in range(max(len(dels), len(ins))):
            c = dels[k] if k < len(dels) else GAP
            h = ins[k] if k < len(ins) else GAP
            columns.append((c, GAP, h))
        if j < len(annotation):
            columns.append((c_at[j], annotation[j], h_at[j]))
    return columns


@dataclass
class MddCounts:
    ta: int = 0
    fr: int = 0
    fa: int = 0
    tr_correct_diag: int = 0
    tr_diag_error: int = 0
    insertions: int = 0

    @property
    def tr(self) -> int:
        return self.tr_correct_diag + self.tr_diag_error

    @property
    def n_canonical_correct(self) -> int:
        return self.ta + self.fr

    @property
    def n_mispronounced(self) -> int:
        return self.fa + self.tr

    def __add__(self, other: "MddCounts") -> "MddCounts":
        return MddCounts(*(x + y for x, y in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple:
        return (self.ta, self.fr, self.fa, self.tr_correct_diag, self.tr_diag_error, self.insertions)

    def to_dict(self) -> dict:
        return asdict(self)


def tally(columns: Iterable) -> MddCounts:
    counts = MddCounts()
    for c, a, h in columns:
        if c is GAP and a is GAP:
            counts.insertions += 1
        elif c == a:
            if h == c:
                counts.ta += 1
            else:
                counts.fr += 1
        elif h == c:
            counts.fa += 1
        elif h == a:
            counts.tr_correct_diag += 1
        else:
            counts.tr_diag_error += 1
    return counts


@dataclass
class MddRates:
    precision: float
    recall: float
    f1: float
    correct_diagnosis_rate: float
    ta_rate: float
    fr_rate: float
    fa_rate: float
    tr_rate: float
    diagnosis_error_rate: float
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den):
    return (num / den, False) if den > 0 else (0.0, True)


def rates(counts: MddCounts) -> MddRates:
    """Precision ``TR/(FR+TR)``, recall ``TR/(FA+TR)``, their F1, and per-column rates.

    Zero denominators yield 0 and set ``degenerate``.
    """
    tr = counts.tr
    precision, d1 = _ratio(tr, counts.fr + tr)
    recall, d2 = _ratio(tr, counts.fa + tr)
    f1, d3 = _ratio(2 * precision * recall, precision + recall)
    cd, d4 = _ratio(counts.tr_correct_diag, tr)
    de, _ = _ratio(counts.tr_diag_error, tr)
    ta, d5 = _ratio(counts.ta, counts.ta + counts.fr)
    fr, _ = _ratio(counts.fr, counts.ta + counts.fr)
    fa, _ = _ratio(counts.fa, counts.fa + tr)
    return MddRates(
        precision=precision,
        recall=recall,
        f1=f1,
        correct_diagnosis_rate=cd,
        ta_rate=ta,
        fr_rate=fr,
        fa_rate=fa,
        tr_rate=recall,
        diagnosis_error_rate=de,
        degenerate=d1 or d2 or d3 or d4 or d5,
    )


def phone_error_rate(reference: Sequence, hypothesis: Sequence) -> float:
    """Edit distance over reference length; an empty reference scores 0 (or 1 if anything was hypothesized)."""
    if not reference:
        return 0.0 if not hypothesis else 1.0
    return edit_distance(reference, hypothesis) / len(reference)


def percent(x: float) -> str:
    """Format a fraction as a percentage, 2 decimals, halves rounded away from zero."""
    return str(Decimal(repr(x * 100)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def score_triples(records: Iterable) -> tuple[MddCounts, int, int]:
    """Accumulate counts and PER numerator/denominator over ``(canonical, annotation, hypothesis)``."""
    total = MddCounts()
    edits = ref_len = 0
    for canonical, annotation, hypothesis in records:
        total = total + tally(align_triple(canonical, annotation, hypothesis))
        edits += edit_distance(annotation, hypothesis)
        ref_len += len(annotation)
    return total, edits, ref_len
