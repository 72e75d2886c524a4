"""Adaptive-permutation autoregressive scene text recognition at desk scale."""

from haap.charset import EVAL36, TRAIN94, Charset, decode, encode, fold_for_eval
from haap.masks import AttentionMask, Permutation, mask_from_permutation

__all__ = [
    "EVAL36",
    "TRAIN94",
    "Charset",
    "decode",
    "encode",
    "fold_for_eval",
    "AttentionMask",
    "Permutation",
    "mask_from_permutation",
]

__version__ = "0.1.0"
