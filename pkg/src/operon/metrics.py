"""Error metrics and inference cost accounting."""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DimensionMismatch, ZeroNormTruth
from .means import MeanArchitecture, forward_flops


def relative_l2_per_sample(pred, truth):
    """``||pred_i - truth_i|| / ||truth_i||`` per sample and output; arrays are ``(n, q, S)``.

    Samples with a zero-norm truth give ``nan``.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.ndim == 2:
        pred, truth = pred[..., None], truth[..., None]
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} and truth {truth.shape} differ")
    num = np.linalg.norm(pred - truth, axis=1)
    den = np.linalg.norm(truth, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def relative_l2(pred, truth):
    """Mean per-sample relative L2 error for each output, shape ``(S,)``.

    Zero-norm truths are skipped with a :class:`ZeroNormTruth` warning.
    """
    errs = relative_l2_per_sample(pred, truth)
    skipped = int(np.isnan(errs).any(axis=1).sum()) if errs.size else 0
    if skipped:
        warnings.warn(f"{skipped} test samples have zero-norm truth and were skipped", ZeroNormTruth, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(errs, axis=0)


def inference_flops(N: int, n: int, m: int, d: int, mean_arch: MeanArchitecture | None = None) -> dict:
    """Floating point operations to predict one output function at ``m`` points.

    ``total = C_m + 4 m^2 (d + 1) - 2 m + 2 N (2 n + 2 m + 1)``. The itemised
    terms (mean, both cross-covariances, the two products) sum to ``2 N m``
    less than this closed form; the difference is listed separately so the
    breakdown adds up to the total.
    """
    for name, v in (("N", N), ("n", n), ("m", m), ("d", d)):
        if int(v) != v or v < 0:
            raise ValueError(f"{name} must be a nonnegative integer")
    if m == 0:
        warnings.warn("m = 0 query points: cost reduces to the input cross-covariance", stacklevel=2)
    C_m = forward_flops(mean_arch, m) if mean_arch is not None else 0
    total = C_m + 4 * m * m * (d + 1) - 2 * m + 2 * N * (2 * n + 2 * m + 1)
    parts = {
        "mean": C_m,
        "output_cross_covariance": m * m * (4 * d + 2),
        "input_cross_covariance": N * (4 * n + 2),
        "products": m * (2 * N - 1) + m * (2 * m - 1),
    }
    parts["closed_form_difference"] = total - sum(parts.values())
    if m == 0:
        parts = {"mean": C_m, "input_cross_covariance": N * (4 * n + 2)}
        total = C_m + 2 * N * (2 * n + 1)
    return {"total": int(total), "terms": {k: int(v) for k, v in parts.items()}}
