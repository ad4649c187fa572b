"""CSV matrices and JSON instance files."""

from __future__ import annotations

import json

import numpy as np

from .core import Instance, SeparationParams, as_alphabet, normalize_alphabet
from .exceptions import DimensionError, ValidationError

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "read_matrix_csv",
    "write_matrix_csv",
    "instance_to_dict",
    "instance_from_dict",
    "load_instance",
    "save_instance",
    "dump_json",
]


def read_matrix_csv(path):
    """Read a numeric CSV (one header line of non-numbers is skipped)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DimensionError(f"{path}: empty file")
    try:
        float(lines[0].split(",")[0])
    except ValueError:
        lines = lines[1:]
    try:
        X = np.array([[float(v) for v in ln.split(",")] for ln in lines], dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"{path}: {exc}") from exc
    if X.ndim != 2:
        raise DimensionError(f"{path}: rows have different lengths")
    return X


def write_matrix_csv(path, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def dump_json(obj, fh=None):
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)
    if fh is None:
        return text
    fh.write(text + "\n")
    return text


def instance_to_dict(inst):
    return {
        "schema": SCHEMA_VERSION,
        "alphabet": list(inst.alphabet.values),
        "m": inst.m,
        "M": inst.M,
        "n": inst.n,
        "omega": inst.weights.tolist(),
        "labels": inst.labels.tolist(),
        "sigma": inst.sigma,
        "delta": inst.params.delta,
        "lambda": inst.params.lam,
        "seed": inst.seed,
        "Y": inst.Y.tolist(),
    }


def instance_from_dict(d):
    """Build an :class:`Instance`; non-normalized alphabets are normalized."""
    try:
        raw = d["alphabet"]
        alphabet = as_alphabet(raw, require_normalized=False)
        if not alphabet.normalized:
            alphabet = normalize_alphabet(raw)
        W = np.asarray(d["omega"], dtype=np.float64)
        labels = np.asarray(d["labels"])
        params = SeparationParams(float(d["delta"]), float(d.get("lambda", 1.0 / W.shape[1])))
    except KeyError as exc:
        raise ValidationError(f"instance is missing key {exc}") from exc
    Y = d.get("Y")
    if Y is not None:
        Y = alphabet.normalize_observations(Y)
    inst = Instance.from_truth(alphabet, W, labels, params, float(d.get("sigma", 0.0)), Y,
                               d.get("seed"))
    for key, val in (("m", inst.m), ("M", inst.M), ("n", inst.n)):
        if key in d and int(d[key]) != val:
            raise DimensionError(f"instance declares {key}={d[key]} but data imply {val}")
    return inst


def load_instance(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return instance_from_dict(d)


def save_instance(inst, path):
    with open(path, "w") as fh:
        dump_json(instance_to_dict(inst), fh)
