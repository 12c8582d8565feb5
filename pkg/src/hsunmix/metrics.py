"""Scoring of unmixing results against ground truth."""
import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .mixing import spectral_angle

EXHAUSTIVE_MAX_R = 8
_TIE_TOL = 1e-9


def sad_matrix(M_hat, M_true):
    """cost[r, s] = angle between true endmember r and estimate s."""
    M_hat = np.asarray(M_hat, dtype=np.float64)
    M_true = np.asarray(M_true, dtype=np.float64)
    if M_hat.shape != M_true.shape:
        raise ValueError(f"endmember shapes differ: {M_hat.shape} vs {M_true.shape}")
    R = M_true.shape[0]
    return np.array([[spectral_angle(M_true[r], M_hat[s]) for s in range(R)] for r in range(R)])


def match_endmembers(M_hat, M_true):
    """Optimal assignment of estimates to true endmembers by total SAD.

    Returns ``perm`` mapping estimated to true indices: estimate ``s`` is
    matched to true endmember ``perm[s]``.  :func:`align` turns it into the
    channel order of the truth.  Up to 8 endmembers every bijection is scored
    and the lexicographically first optimum wins, so ties resolve to the
    lowest indices; larger problems use the Hungarian algorithm.
    """
    cost = sad_matrix(M_hat, M_true)
    R = cost.shape[0]
    if R <= EXHAUSTIVE_MAX_R:
        perms = np.array(list(itertools.permutations(range(R))), dtype=np.int64)
        totals = cost[perms, np.arange(R)].sum(axis=1)
        best = int(np.flatnonzero(totals <= totals.min() + _TIE_TOL)[0])
        return perms[best]
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(R, dtype=np.int64)
    perm[cols] = rows
    return perm


def _check_perm(perm, R):
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (R,) or sorted(perm.tolist()) != list(range(R)):
        raise ValueError(f"{np.asarray(perm).tolist()} is not a permutation of 0..{R - 1}")
    return perm


def align(perm):
    """Index array ``idx`` with ``X_hat[..., idx]`` ordered like the truth."""
    return np.argsort(_check_perm(perm, len(perm)))


def assignment_cost(M_hat, M_true, perm):
    """Total SAD of the bijection ``perm`` (estimated -> true)."""
    cost = sad_matrix(M_hat, M_true)
    perm = _check_perm(perm, cost.shape[0])
    return float(cost[perm, np.arange(len(perm))].sum())


def rmse_abun(A_hat, A_true, perm=None):
    A_hat = np.asarray(A_hat, dtype=np.float64)
    A_true = np.asarray(A_true, dtype=np.float64)
    if perm is not None:
        _check_perm(perm, A_hat.shape[-1])
        A_hat = A_hat[..., align(perm)]
    if A_hat.shape != A_true.shape:
        raise ValueError(f"abundance shapes differ: {A_hat.shape} vs {A_true.shape}")
    return float(math.sqrt(np.mean((A_hat - A_true) ** 2)))


def sad_end(M_hat, M_true, perm=None):
    """Mean angle between matched endmember pairs (radians)."""
    M_hat = np.asarray(M_hat, dtype=np.float64)
    M_true = np.asarray(M_true, dtype=np.float64)
    if M_hat.shape != M_true.shape:
        raise ValueError(f"endmember shapes differ: {M_hat.shape} vs {M_true.shape}")
    if perm is not None:
        _check_perm(perm, M_hat.shape[0])
        M_hat = M_hat[align(perm)]
    return float(np.mean([spectral_angle(t, e) for t, e in zip(M_true, M_hat)]))


def rmse_b(B_hat, B_true):
    B_hat = np.asarray(B_hat, dtype=np.float64)
    B_true = np.asarray(B_true, dtype=np.float64)
    if B_hat.shape != B_true.shape:
        raise ValueError(f"B field shapes differ: {B_hat.shape} vs {B_true.shape}")
    return float(math.sqrt(np.mean((B_hat - B_true) ** 2)))


def b_histogram(B, bins=20):
    """Equal-width histogram over [min, max]; returns (bin_centers, counts)."""
    if bins < 1:
        raise ValueError("b_histogram: bins must be >= 1")
    B = np.asarray(B, dtype=np.float64).ravel()
    counts, edges = np.histogram(B, bins=bins)
    return 0.5 * (edges[:-1] + edges[1:]), counts


def histogram_csv(centers, counts):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_center", "count"])
    for c, n in zip(centers, counts):
        w.writerow([repr(float(c)), int(n)])
    return buf.getvalue()


@dataclass
class EvalReport:
    rmse_abun: float
    sad_end: float
    permutation: List[int]
    rmse_b: Optional[float] = None

    def to_dict(self):
        d = asdict(self)
        if d["rmse_b"] is None:
            del d["rmse_b"]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def evaluate(A_hat, M_hat, A_true, M_true, B_hat=None, B_true=None):
    """Align estimates to the truth by endmember SAD, then score."""
    M_hat = np.asarray(M_hat)
    M_true = np.asarray(M_true)
    if M_hat.shape[0] != M_true.shape[0]:
        raise ValueError(f"endmember count mismatch: {M_hat.shape[0]} estimated vs {M_true.shape[0]} true")
    perm = match_endmembers(M_hat, M_true)
    rb = None
    if B_hat is not None and B_true is not None:
        rb = rmse_b(B_hat, B_true)
    return EvalReport(rmse_abun=rmse_abun(A_hat, A_true, perm), sad_end=sad_end(M_hat, M_true, perm),
                      permutation=[int(i) for i in perm], rmse_b=rb)
