"""Attention redirection: additive ``log(lambda)`` logit bias between token region sets.

Token ids are absolute positions in the joint sequence ``[text; image]``; image
token ``n`` has id ``text_len + n``. Rules only ever touch image-image pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from glyphfill.canvas import LayoutSpec, Region, token_region_labels
from glyphfill.errors import ShapeError


@dataclass(frozen=True)
class SuppressionRule:
    query_tokens: np.ndarray
    key_tokens: np.ndarray
    lam: float


@dataclass
class SuppressionSpec:
    rules: list[SuppressionRule]
    L_txt: int
    L_img: int

    def __post_init__(self):
        lo, hi = self.L_txt, self.L_txt + self.L_img
        for r in self.rules:
            if not 0.0 < r.lam <= 1.0:
                raise ValueError(f"lambda must lie in (0, 1], got {r.lam}")
            for ids in (r.query_tokens, r.key_tokens):
                ids = np.asarray(ids)
                if ids.size and (ids.min() < lo or ids.max() >= hi):
                    raise ValueError("suppression rules may only reference image tokens")

    @property
    def L(self) -> int:
        return self.L_txt + self.L_img

    def __add__(self, other: "SuppressionSpec") -> "SuppressionSpec":
        if (self.L_txt, self.L_img) != (other.L_txt, other.L_img):
            raise ShapeError("cannot combine suppression specs of different sequence layouts")
        return SuppressionSpec(self.rules + other.rules, self.L_txt, self.L_img)


@dataclass
class RegionSets:
    R_b: np.ndarray  # glyph-background token ids (queries)
    R_f: np.ndarray  # reference-foreground token ids (keys)
    text_len: int = 0
    meta: dict = field(default_factory=dict)


def derive_region_sets(
    labels: np.ndarray,
    mask_tokens,
    ref_foreground_tokens,
    tau: float = 0.5,
    text_len: int = 0,
) -> RegionSets:
    """``R_b``: glyph tokens whose mask average is below ``tau``; ``R_f``: reference tokens whose
    foreground coverage exceeds ``tau``. Pass all-ones coverage for amorphous references."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    lab = np.asarray(labels).reshape(-1)
    m = np.asarray(mask_tokens, dtype=np.float64).reshape(-1)
    fg = np.asarray(ref_foreground_tokens, dtype=np.float64).reshape(-1)
    if not (lab.size == m.size == fg.size):
        raise ShapeError(f"labels {lab.size}, mask {m.size}, foreground {fg.size} token counts differ")
    R_b = np.flatnonzero((lab == Region.GLYPH) & (m < tau)) + text_len
    R_f = np.flatnonzero((lab == Region.REF) & (fg > tau)) + text_len
    return RegionSets(R_b=R_b, R_f=R_f, text_len=text_len)


def dehallucination_spec(regions: RegionSets, lam: float, L_img: int) -> SuppressionSpec:
    rule = SuppressionRule(query_tokens=regions.R_b, key_tokens=regions.R_f, lam=float(lam))
    return SuppressionSpec([rule], L_txt=regions.text_len, L_img=L_img)


def build_bias(spec: SuppressionSpec, L: int | None = None) -> tuple[np.ndarray, int]:
    """``bias[i, j] = sum of log(lambda)`` over rules with ``i`` in query and ``j`` in key.

    Returns the ``[L, L]`` bias and the number of ``(i, j)`` cells hit by more
    than one rule (those compose multiplicatively in weight space).
    """
    L = spec.L if L is None else L
    if L != spec.L:
        raise ShapeError(f"bias size {L} does not match spec length {spec.L}")
    bias = np.zeros((L, L))
    hits = np.zeros((L, L), dtype=np.int32)
    for r in spec.rules:
        q = np.asarray(r.query_tokens, dtype=np.int64)
        k = np.asarray(r.key_tokens, dtype=np.int64)
        if q.size == 0 or k.size == 0:
            continue
        bias[np.ix_(q, k)] += np.log(r.lam)
        hits[np.ix_(q, k)] += 1
    return bias, int(np.count_nonzero(hits > 1))


def bias_tensor(spec: SuppressionSpec, L: int, dtype=torch.float32) -> torch.Tensor:
    bias, _ = build_bias(spec, L)
    return torch.as_tensor(bias, dtype=dtype)


def verify_reweight(logits_row, bias_row, lam: float, suppressed, tol: float = 1e-12) -> bool:
    """Check that each suppressed weight equals ``lam * e^{A_j} / sum_k e^{A_k + bias_k}``."""
    a = np.asarray(logits_row, dtype=np.float64)
    b = np.asarray(bias_row, dtype=np.float64)
    weights = torch.softmax(torch.as_tensor(a + b), dim=-1).numpy()
    z = np.exp(a + b).sum()
    for j in np.asarray(suppressed, dtype=np.int64):
        if abs(weights[j] - lam * np.exp(a[j]) / z) > tol:
            return False
    return True


def _token_rows(fractions, n_rows: int) -> list[int]:
    cuts = [0]
    for f in sorted(fractions):
        r = f * n_rows
        if not 0.0 < f < 1.0 or abs(r - round(r)) > 1e-9:
            raise ShapeError(f"partition cut {f} does not fall on a token row boundary ({n_rows} rows)")
        cuts.append(int(round(r)))
    cuts.append(n_rows)
    if len(set(cuts)) != len(cuts):
        raise ShapeError("partition cuts must be distinct")
    return cuts


def build_region_mix_rules(layout: LayoutSpec, partitions, lam: float, text_len: int = 0) -> SuppressionSpec:
    """Horizontal bands spanning reference and glyph regions; for every ordered pair of distinct
    bands ``(P, Q)`` suppress glyph tokens of ``P`` attending to reference tokens of ``Q``.

    ``partitions`` are fractional cut heights, e.g. ``[0.5]`` for two halves.
    """
    labels = token_region_labels(layout)
    n_rows, n_cols = labels.shape
    cuts = _token_rows(partitions, n_rows)
    ids = np.arange(n_rows * n_cols).reshape(n_rows, n_cols) + text_len
    bands = [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]
    rules = []
    for p, (p0, p1) in enumerate(bands):
        for q, (q0, q1) in enumerate(bands):
            if p == q:
                continue
            query = ids[p0:p1][labels[p0:p1] == Region.GLYPH]
            key = ids[q0:q1][labels[q0:q1] == Region.REF]
            rules.append(SuppressionRule(query_tokens=query, key_tokens=key, lam=float(lam)))
    return SuppressionSpec(rules, L_txt=text_len, L_img=n_rows * n_cols)


def cross_region_mass(attn_weights: list[torch.Tensor], regions: RegionSets) -> float:
    """Attention mass from ``R_f`` keys to ``R_b`` queries, averaged over batch and heads,
    summed over the given per-block weight tensors ``[B, heads, L, L]``."""
    q = torch.as_tensor(regions.R_b, dtype=torch.long)
    k = torch.as_tensor(regions.R_f, dtype=torch.long)
    total = 0.0
    for w in attn_weights:
        sub = w.index_select(-2, q).index_select(-1, k)
        total += float(sub.sum(dim=(-1, -2)).mean())
    return total
