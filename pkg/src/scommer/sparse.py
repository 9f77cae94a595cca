"""Filter-level k-winner-take-all.

Each convolution filter is scored by the absolute sum of its activation map and
only the top-k filters are propagated (then rectified). Dense units are treated
as 1x1 filters, so the same routines serve both layer kinds.
"""

import math

import numpy as np

_EPS = 1e-9


def k_for(ratio, n_filters):
    """Number of winners for a layer: ``max(1, round_half_up(ratio * n))``."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"sparsity ratio must lie in (0, 1], got {ratio}")
    return max(1, min(n_filters, math.floor(ratio * n_filters + 0.5 + _EPS)))


def filter_scores(act_map):
    """Absolute activation sum per filter.

    ``act_map`` is ``(C, H, W)`` for a single sample; a leading batch axis is
    also accepted, in which case the result is ``(B, C)``. Dense activations
    ``(B, N)`` score each unit by its magnitude.
    """
    act_map = np.asarray(act_map, dtype=np.float64)
    if act_map.ndim == 3:
        return np.abs(act_map).reshape(act_map.shape[0], -1).sum(axis=1)
    if act_map.ndim == 4:
        return np.abs(act_map).reshape(act_map.shape[0], act_map.shape[1], -1).sum(axis=2)
    if act_map.ndim in (1, 2):
        return np.abs(act_map)
    raise ValueError(f"unsupported activation rank {act_map.ndim}")


def kwta_mask(scores, ratio, candidates=None):
    """Binary mask of the top-k scores along the last axis.

    Ties at the threshold go to the lower filter index. When ``candidates`` is
    given, non-candidates can never win; if fewer than k candidates exist all
    of them are kept.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k = k_for(ratio, scores.shape[-1])
    if candidates is not None:
        candidates = np.asarray(candidates).astype(bool)
        # scores are nonnegative, so -1 ranks every excluded filter last
        scores = np.where(candidates, scores, -1.0)
    order = np.argsort(-scores, axis=-1, kind="stable")
    mask = np.zeros(scores.shape, dtype=np.float64)
    np.put_along_axis(mask, order[..., :k], 1.0, axis=-1)
    if candidates is not None:
        mask *= candidates
    return mask


def apply_kwta(act_map, ratio, pre_mask=None):
    """Dropout pre-mask, then k-WTA over filters, then ReLU.

    Works on a single ``(C, H, W)`` map or a batch ``(B, C, ...)``; in the
    batched form ``pre_mask`` is ``(B, C)``.
    """
    act_map = np.asarray(act_map, dtype=np.float64)
    batched = act_map.ndim in (2, 4)
    filt_shape = act_map.shape[:2] if batched else act_map.shape[:1]
    if pre_mask is not None:
        pre_mask = np.asarray(pre_mask, dtype=np.float64)
        if pre_mask.shape != filt_shape:
            raise ValueError(f"pre_mask shape {pre_mask.shape} does not match filters {filt_shape}")
    selected = selection_mask(act_map, ratio, pre_mask)
    return np.maximum(act_map, 0.0) * _expand(selected, act_map.ndim)


def selection_mask(act_map, ratio, pre_mask=None):
    """Per-filter 0/1 mask of the filters that survive dropout and k-WTA."""
    masked = act_map if pre_mask is None else act_map * _expand(pre_mask, act_map.ndim)
    return kwta_mask(filter_scores(masked), ratio, candidates=pre_mask)


def flat_kwta(act_map, ratio):
    """Element-level k-WTA on the flattened ``C*H*W`` vector (comparison only)."""
    act_map = np.asarray(act_map, dtype=np.float64)
    flat = act_map.reshape(act_map.shape[0], -1) if act_map.ndim == 4 else act_map.reshape(1, -1)
    mask = kwta_mask(np.abs(flat), ratio)
    return (np.maximum(flat, 0.0) * mask).reshape(act_map.shape)


def _expand(mask, ndim):
    # (B, C) -> (B, C, 1, 1) for conv maps; (C,) -> (C, 1, 1)
    extra = ndim - mask.ndim
    return mask.reshape(mask.shape + (1,) * extra)
