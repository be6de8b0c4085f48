"""Beam-labeled datasets and the channel-knowledge-map labeler.

The labeler composes a learned map ``c`` from position to a fixed-length
path description with the exact beam search ``g``: it rebuilds the channel
from the predicted paths and returns the best codebook pair.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..datasets import LabeledDataset
from ..labelers import Labeler, LabelerSpec, fit, register_labeler
from .arrays import (
    ArrayGeometry,
    Codebook,
    PathSet,
    channel_from_paths,
    make_upa_codebook,
    rx_steering,
    trivial_codebook,
    upa_steering,
)
from .environment import Environment


def default_codebooks(geom: ArrayGeometry) -> tuple:
    tx = make_upa_codebook(geom.n_y, geom.n_z, geom.spacing)
    if geom.n_rx == 1:
        rx = trivial_codebook(1)
    else:
        from .arrays import grid, ula_response
        rx = Codebook(ula_response(geom.n_rx, grid(2 * geom.n_rx), geom.spacing))
    return tx, rx


def channels_from_vectors(V, geom: ArrayGeometry, L: int) -> np.ndarray:
    """Channels for rows of fixed-length path vectors; shape (n, n_tx, n_rx).

    Arrival angles are taken as broadside, which is exact for a single
    receive antenna.
    """
    V = np.asarray(V, dtype=float).reshape(-1, L, 4)
    gains = V[:, :, 0] + 1j * V[:, :, 1]
    theta = np.clip(V[:, :, 2], 0.0, np.pi)
    phi = np.clip(V[:, :, 3], -np.pi, np.pi)
    at = upa_steering(geom.n_y, geom.n_z, theta, phi, geom.spacing)
    ar = rx_steering(geom, np.full(theta.shape, np.pi / 2), np.zeros(theta.shape))
    return np.einsum("nl,nlt,nlr->ntr", gains, at, ar.conj())


def best_pairs(H, tx: Codebook, rx: Codebook) -> np.ndarray:
    """Row-major optimal pair index for each channel in a stack ``(n, n_tx, n_rx)``."""
    G = np.einsum("ut,ntr,wr->nuw", tx.beams.conj(), np.asarray(H, dtype=complex), rx.beams)
    return np.argmax((np.abs(G) ** 2).reshape(G.shape[0], -1), axis=1)


def pair_gains(H, labels, tx: Codebook, rx: Codebook) -> np.ndarray:
    """``|u_j^H H w_j|^2`` for each channel in the stack and its pair index."""
    iu, iw = np.divmod(np.asarray(labels, dtype=np.int64), len(rx))
    g = np.einsum("nt,ntr,nr->n", tx.beams[iu].conj(), np.asarray(H, dtype=complex),
                  rx.beams[iw])
    return np.abs(g) ** 2


def capacities(H, labels, tx: Codebook, rx: Codebook, P: float = 1.0,
               noise_var: float = 1.0) -> np.ndarray:
    return np.log2(1.0 + P * pair_gains(H, labels, tx, rx) / noise_var)


class CkmLabeler(Labeler):
    """``f(X) = g(c(X))`` with ``c`` any map from positions to path vectors."""

    task = "classification"

    def __init__(self, regressor, geom: ArrayGeometry, tx: Codebook, rx: Codebook, L: int):
        self.regressor = regressor
        self.geom, self.tx, self.rx, self.L = geom, tx, rx, int(L)
        self.n_classes = len(tx) * len(rx)

    def predict(self, X):
        V = np.asarray(self.regressor(np.atleast_2d(np.asarray(X, dtype=float))), dtype=float)
        return best_pairs(channels_from_vectors(V, self.geom, self.L), self.tx, self.rx)


def ckm_labeler_fit(data: LabeledDataset, geom: ArrayGeometry, tx: Codebook | None = None,
                    rx: Codebook | None = None, mlp_params: dict | None = None,
                    seed=0) -> CkmLabeler:
    """Fit an Mlp regressor from position to the path vectors stored in
    ``data.side`` and wrap it with the exact beam search."""
    if data.side is None:
        raise ValueError("the CKM labeler needs path vectors in data.side")
    if tx is None or rx is None:
        tx, rx = default_codebooks(geom)
    side = np.asarray(data.side, dtype=float)
    if side.ndim != 2 or side.shape[1] % 4:
        raise ValueError("path vectors must have 4 entries per path")
    L = side.shape[1] // 4
    reg_data = LabeledDataset(data.inputs, side)
    params = dict(mlp_params or {})
    model = fit(LabelerSpec("Mlp", params, seed), reg_data)
    return CkmLabeler(model.predict, geom, tx, rx, L)


def _fit_from_spec(spec: LabelerSpec, data: LabeledDataset) -> CkmLabeler:
    p = dict(spec.params)
    geom = p.pop("geometry", None) or ArrayGeometry()
    tx = p.pop("tx", None)
    rx = p.pop("rx", None)
    return ckm_labeler_fit(data, geom, tx, rx, p, spec.seed)


register_labeler("Ckm", _fit_from_spec)


def beam_dataset(env: Environment, geom: ArrayGeometry, tx: Codebook, rx: Codebook,
                 positions) -> tuple:
    """Positions labeled with their optimal beam pair.

    Returns
    -------
    data : LabeledDataset
        ``inputs`` are positions, ``labels`` the pair indices, ``side`` the
        fixed-length path vectors (``env.L_max`` paths).
    H : complex ndarray of shape (n, n_tx, n_rx)
        True channels, for capacity evaluation.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    J = len(tx) * len(rx)
    L = env.L_max
    if positions.shape[0] == 0:
        return (LabeledDataset(positions, np.zeros(0, dtype=np.int64), J, np.zeros((0, 4 * L))),
                np.zeros((0, geom.n_tx, geom.n_rx), dtype=complex))
    paths = [env.paths(x) for x in positions]
    H = np.stack([channel_from_paths(z, geom) for z in paths])
    labels = best_pairs(H, tx, rx)
    side = np.stack([z.to_vector(L) for z in paths])
    return LabeledDataset(positions, labels, J, side), H


def write_beam_csv(data: LabeledDataset, path) -> None:
    """CSV with header ``x,y,z,label``; coordinates in ``repr`` form."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "label"])
        for x, y in zip(data.inputs, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def read_beam_csv(path, n_classes: int) -> LabeledDataset:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "y", "z", "label"]:
        raise ValueError("expected header x,y,z,label")
    X = np.array([[float(v) for v in r[:3]] for r in rows[1:]]).reshape(-1, 3)
    y = np.array([int(r[3]) for r in rows[1:]], dtype=np.int64)
    return LabeledDataset(X, y, n_classes)
