"""Local measurements on constructed states.

Each user measures their own register. The measurement is assembled from
the register tree and a per-layer setting:

* GHZ factors (virtual qubits): ``"z"``, ``"x"`` or ``"y"`` Pauli bases.
* superpose nodes: ``"z"`` identifies the branch (subspace projection)
  and keeps measuring inside it; a test setting instead applies the
  down-projected parity observable e^{iφ}W + e^{-iφ}W†, where W pairs
  the right branch's symbols with the left branch's in alphabet order.
  ``"x"`` means φ = 0, ``"y"`` means φ = π/2, and a float gives φ
  directly. Symbols W leaves unpaired give a fair coin.

Outcome records map layers to values: the key symbol for ``"z"`` and a
bit for tests (0 for eigenvalue +1, 1 for -1). Layers the measurement
never reached are absent from the record.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .keystructure import layer_label
from .quantum import (
    BOTTOM,
    Construction,
    Fused,
    KeyExtractionMap,
    Leaf,
    Register,
    SparseState,
    Summed,
    dense_distribution,
)

COIN = -2
Setting = Union[str, float]

_S = 1 / math.sqrt(2)
PAULI_ROWS = {
    "z": np.eye(2, dtype=complex),
    "x": np.array([[_S, _S], [_S, -_S]], dtype=complex),
    "y": np.array([[_S, -1j * _S], [_S, 1j * _S]], dtype=complex),
}


class MeasurementError(ValueError):
    pass


def _phase(setting: Setting) -> float:
    if setting == "x":
        return 0.0
    if setting == "y":
        return math.pi / 2
    return float(setting)


def measurement_basis(reg: Register, settings: Mapping) -> tuple[np.ndarray, list[dict]]:
    """Rows of the measurement basis for one register, and the record of each row."""
    if isinstance(reg, Leaf):
        s = settings.get(reg.layer, "z") if reg.layer is not None else "z"
        if s == "z" or reg.dim == 1:
            recs = [{reg.layer: i} if reg.layer is not None else {} for i in range(reg.dim)]
            return np.eye(reg.dim, dtype=complex), recs
        if reg.dim != 2 or s not in ("x", "y"):
            raise MeasurementError(f"setting {s!r} not available on a dimension-{reg.dim} factor")
        return PAULI_ROWS[s], [{reg.layer: 0}, {reg.layer: 1}]

    if isinstance(reg, Fused):
        ua, ra = measurement_basis(reg.first, settings)
        ub, rb = measurement_basis(reg.second, settings)
        da = len(ra)
        recs = [{**ra[o % da], **rb[o // da]} for o in range(da * len(rb))]
        return np.kron(ub, ua), recs

    s = settings.get(reg.layer, "z")
    dim = reg.dim
    if s == "z":
        u = np.zeros((dim, dim), dtype=complex)
        recs: list[dict] = []
        for b, (seg, off) in enumerate(zip(reg.segments, reg.offsets())):
            if seg is None:
                u[off, off] = 1
                recs.append({reg.layer: b})
                continue
            us, rs = measurement_basis(seg, settings)
            u[off:off + seg.dim, off:off + seg.dim] = us
            recs.extend({reg.layer: b, **r} for r in rs)
        return u, recs

    if len(reg.segments) != 2:
        raise MeasurementError(f"parity tests need a binary node; {layer_label(reg.layer)} "
                               f"has {len(reg.segments)} branches")
    phi = _phase(s)
    left = 1 if reg.segments[0] is None else reg.segments[0].dim
    right = dim - left
    pairs = min(left, right)
    u = np.zeros((dim, dim), dtype=complex)
    recs = []
    row = 0
    for k in range(pairs):
        for sign, bit in ((1, 0), (-1, 1)):
            u[row, k] = _S
            u[row, left + k] = sign * np.exp(1j * phi) * _S
            recs.append({reg.layer: bit})
            row += 1
    for idx in list(range(pairs, left)) + list(range(left + pairs, dim)):
        u[row, idx] = 1
        recs.append({reg.layer: COIN})
        row += 1
    return u, recs


def parity_operator(reg: Summed, phi: float) -> np.ndarray:
    """e^{iφ}W + e^{-iφ}W† for a binary node register."""
    if not isinstance(reg, Summed) or len(reg.segments) != 2:
        raise MeasurementError("parity operator needs a binary superpose register")
    left = 1 if reg.segments[0] is None else reg.segments[0].dim
    w = np.zeros((reg.dim, reg.dim), dtype=complex)
    for k in range(min(left, reg.dim - left)):
        w[k, left + k] = 1
    return np.exp(1j * phi) * w + np.exp(-1j * phi) * w.conj().T


def apply_local(psi: np.ndarray, ops: Sequence[np.ndarray]) -> np.ndarray:
    """Apply one operator per tensor axis."""
    for axis, op in enumerate(ops):
        psi = np.moveaxis(np.tensordot(op, psi, axes=([1], [axis])), 0, axis)
    return psi


def outcome_distribution(construction: Construction, settings: Mapping[str, Mapping]):
    """Exact joint distribution for per-user settings.

    Returns (probabilities with shape = dims, records) where ``records[j][o]``
    is the outcome record of user j's outcome index o.
    """
    bases = [measurement_basis(construction.registers[u], settings.get(u, {}))
             for u in construction.users]
    psi = apply_local(construction.state.to_dense(), [b[0] for b in bases])
    return np.abs(psi) ** 2, [b[1] for b in bases]


def sample_from(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of flat indices from uniforms ``u``."""
    cdf = np.cumsum(np.ravel(probs))
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def sample_computational(state: SparseState, rng: np.random.Generator, size: Optional[int] = None):
    """Computational-basis outcome(s): a tuple, or an (size, n) array."""
    u = rng.random(1 if size is None else size)
    rows = state.support[sample_from(state.probabilities, u)]
    return tuple(int(x) for x in rows[0]) if size is None else rows


def key_table(keymap: KeyExtractionMap, outcomes: np.ndarray) -> dict[frozenset, np.ndarray]:
    """Vectorized key decoding: per layer, an (N, members) array of symbols."""
    pos = {u: i for i, u in enumerate(keymap.users)}
    return {layer: np.stack([keymap.table(layer, u)[outcomes[:, pos[u]]]
                             for u in keymap.members(layer)], axis=1)
            for layer in keymap.layers}


def _is_flat(reg: Register) -> bool:
    if isinstance(reg, Leaf):
        return reg.layer is None and reg.dim == 1 or reg.layer is not None and reg.dim == 2
    if isinstance(reg, Fused):
        return _is_flat(reg.first) and _is_flat(reg.second)
    return False


def measure_flat_pauli(construction: Construction, setting: Mapping[str, Sequence[str]],
                       rng: np.random.Generator, size: Optional[int] = None):
    """Per-virtual-qubit Pauli measurement on a flat construction.

    ``setting[user]`` lists x/y/z for the user's layers in canonical order
    (users left out measure z everywhere). Returns a dict mapping
    (user, layer) to a bit, or to an int array with ``size`` draws.
    """
    if not all(_is_flat(r) for r in construction.registers.values()):
        raise MeasurementError("state is not a flat (tensor-of-virtual-qubits) construction")
    per_user = {}
    for u, choice in setting.items():
        mine = [layer for layer in construction.keymap.layers if u in construction.keymap.tables[layer]]
        if u not in construction.registers or len(choice) != len(mine):
            raise MeasurementError(f"setting for {u} does not match its virtual qubits")
        per_user[u] = dict(zip(mine, choice))
    probs, recs = outcome_distribution(construction, per_user)
    flat = sample_from(probs, rng.random(1 if size is None else size))
    idx = np.unravel_index(flat, probs.shape)
    out = {}
    for j, u in enumerate(construction.users):
        for layer in construction.keymap.layers:
            if u in construction.keymap.tables[layer]:
                vals = np.array([recs[j][o][layer] for o in idx[j]])
                out[(u, layer)] = int(vals[0]) if size is None else vals
    return out


def _phases(construction: Construction, phi) -> dict[str, float]:
    if isinstance(phi, Mapping):
        return {u: _phase(phi.get(u, 0.0)) for u in construction.users}
    return {u: _phase(phi) for u in construction.users}


def lifted_parity_expectation(construction: Construction, layer, phi) -> float:
    """Exact ⟨Ψ| ⊗_j O_j(φ_j) |Ψ⟩ for the binary superpose node implementing ``layer``.

    ``phi`` is one phase for everybody or a mapping user -> phase.
    """
    try:
        sub = construction.subconstruction(frozenset(layer))
    except KeyError as exc:
        raise MeasurementError(str(exc)) from None
    phases = _phases(sub, phi)
    ops = [parity_operator(sub.registers[u], phases[u]) for u in sub.users]
    psi = sub.state.to_dense()
    return float(np.real(np.vdot(psi, apply_local(psi, ops))))


def sample_lifted_parity(construction: Construction, layer, phi, rng: np.random.Generator,
                         size: int) -> np.ndarray:
    """Sampled ±1 products of the two-outcome parity observable."""
    try:
        sub = construction.subconstruction(frozenset(layer))
    except KeyError as exc:
        raise MeasurementError(str(exc)) from None
    layer = sub.root_layer
    phases = _phases(sub, phi)
    probs, recs = outcome_distribution(sub, {u: {layer: phases[u]} for u in sub.users})
    idx = np.unravel_index(sample_from(probs, rng.random(size)), probs.shape)
    coins = rng.random((size, len(sub.users))) < 0.5
    product = np.ones(size, dtype=np.int64)
    for j in range(len(sub.users)):
        bits = np.array([r[layer] for r in recs[j]])[idx[j]]
        bits = np.where(bits == COIN, coins[:, j], bits)
        product *= 1 - 2 * bits
    return product


def branch_correlation(construction: Construction, layer) -> float:
    """Probability that every member reads the same branch of ``layer``'s node
    under the branch-index measurement (exact, from the dense distribution)."""
    layer = frozenset(layer)
    keymap = construction.keymap
    probs = dense_distribution(construction.state)
    pos = {u: i for i, u in enumerate(construction.users)}
    grids = np.indices(probs.shape)
    reads = [keymap.table(layer, u)[grids[pos[u]]] for u in keymap.members(layer)]
    agree = np.all([r == reads[0] for r in reads], axis=0) & (reads[0] != BOTTOM)
    return float(probs[agree].sum())
