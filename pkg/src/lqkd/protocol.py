"""End-to-end simulation of the layered QKD protocol.

Each round every user picks, for each layer they belong to, a setting:
``z`` (key basis) with probability 1 - test_bias, otherwise ``x`` or ``y``
with equal probability. All users measure the shared state, settings are
announced, and every layer is then sifted and estimated on its own.

Noise is isotropic outcome replacement: with probability ``noise_v`` a
round follows the ideal state's statistics, otherwise every user's
outcome index is uniform over their register.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from . import streams
from .keystructure import layer_key, layer_label
from .measurement import (
    COIN,
    lifted_parity_expectation,
    measurement_basis,
    outcome_distribution,
    sample_from,
)
from .plan import ConstructionPlan
from .quantum import BOTTOM, Construction, Leaf, Summed, build_from_plan

CODES = ("z", "x", "y")
KEY, TEST, MIXED = 0, 1, 2


class InsufficientData(ValueError):
    """Raised when a layer lacks the rounds an estimate needs. ``which`` is 'QZ' or 'QX'."""

    def __init__(self, which: str, layer: frozenset):
        super().__init__(f"not enough rounds to estimate {which} for {layer_label(layer)}")
        self.which = which
        self.layer = layer


@dataclass(frozen=True)
class ProtocolConfig:
    rounds: int = 10_000
    test_bias: float = 1 / 3
    noise_v: float = 1.0
    seed: int = 0
    sacrifice_fraction: float = 0.1

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        for name in ("test_bias", "noise_v", "sacrifice_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")


def _find_node(reg, layer):
    """The Leaf or Summed node implementing ``layer`` inside a register tree."""
    if isinstance(reg, Leaf):
        return reg if reg.layer == layer else None
    if isinstance(reg, Summed):
        if reg.layer == layer:
            return reg
        parts = [s for s in reg.segments if s is not None]
    else:
        parts = [reg.first, reg.second]
    for p in parts:
        hit = _find_node(p, layer)
        if hit is not None:
            return hit
    return None


def slots_of(construction: Construction) -> list[tuple[str, frozenset]]:
    """(user, layer) measurement slots: one per layer membership, canonical layer order."""
    km = construction.keymap
    return [(u, layer) for layer in km.layers for u in km.members(layer)]


def testable(construction: Construction, layer: frozenset) -> bool:
    """Whether the layer's node admits x/y test settings (qubit leaf or binary node)."""
    u = construction.keymap.members(layer)[0]
    node = _find_node(construction.registers[u], layer)
    if isinstance(node, Leaf):
        return node.dim == 2
    return len(node.segments) == 2


@dataclass(eq=False)
class SessionTranscript:
    construction: Construction
    config: ProtocolConfig
    slots: list
    settings: np.ndarray   # (rounds, slots) codes into CODES
    outcomes: np.ndarray   # (rounds, users) outcome index in each user's measured basis
    coins: np.ndarray      # (rounds, slots) fair bits for unpaired parity outcomes
    values: np.ndarray     # (rounds, slots) decoded value; BOTTOM where nothing was read

    @property
    def rounds(self) -> int:
        return self.settings.shape[0]

    def layer_slots(self, layer) -> list[int]:
        layer = frozenset(layer)
        return [i for i, (_, k) in enumerate(self.slots) if k == layer]

    def _slot(self, user, layer) -> int:
        return self.slots.index((user, layer))

    def classification(self, layer) -> np.ndarray:
        """Per round: KEY, TEST or MIXED for this layer."""
        layer = frozenset(layer)
        mine = self.settings[:, self.layer_slots(layer)]
        above = [self._slot(u, a) for a in self.construction.ancestors(layer) for u in sorted(layer)]
        clear = np.all(self.settings[:, above] == 0, axis=1) if above else np.ones(self.rounds, bool)
        out = np.full(self.rounds, MIXED, dtype=np.int8)
        out[clear & np.all(mine == 0, axis=1)] = KEY
        out[clear & np.all(mine != 0, axis=1)] = TEST
        return out

    @cached_property
    def sacrificed(self) -> dict:
        """Per layer, a boolean mask of key rounds disclosed for error estimation."""
        out = {}
        for i, layer in enumerate(self.construction.keymap.layers):
            u = streams.uniforms(self.config.seed, "sacrifice", i, 0, self.rounds)
            out[layer] = (self.classification(layer) == KEY) & (u < self.config.sacrifice_fraction)
        return out

    # -- files -----------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "user", "setting", "outcome_symbol"])
        by_user = {u: [i for i, (v, _) in enumerate(self.slots) if v == u]
                   for u in self.construction.users}
        raw = self.decode_raw()
        for r in range(self.rounds):
            for j, u in enumerate(self.construction.users):
                idx = by_user[u]
                setting = ".".join(CODES[c] for c in self.settings[r, idx]) or "-"
                symbol = str(self.outcomes[r, j])
                flips = "".join(str(self.coins[r, i]) for i in idx if raw[r, i] == COIN)
                if flips:
                    symbol += "/" + flips
                w.writerow([r, u, setting, symbol])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def decode_raw(self) -> np.ndarray:
        """Values before coin substitution (COIN marks unpaired parity outcomes)."""
        return _decode(self.construction, self.slots, self.settings, self.outcomes)


def _user_tables(construction: Construction, slots, combo) -> list[np.ndarray]:
    """Per user, an array (outcome index, slot) -> value for this setting combination."""
    per_user: dict = {u: {} for u in construction.users}
    for (u, layer), code in zip(slots, combo):
        if code:
            per_user[u][layer] = CODES[code]
    records = _records(construction, per_user)
    tables = []
    for j, u in enumerate(construction.users):
        t = np.full((len(records[j]), len(slots)), BOTTOM, dtype=np.int64)
        for o, rec in enumerate(records[j]):
            for s, (v, layer) in enumerate(slots):
                if v == u and layer in rec:
                    t[o, s] = rec[layer]
        tables.append(t)
    return tables


def _records(construction: Construction, per_user) -> list[list[dict]]:
    if not any(per_user.values()):
        km = construction.keymap
        records = []
        for u, d in zip(construction.users, construction.state.dims):
            mine = [layer for layer in km.layers if u in km.tables[layer]]
            records.append([{layer: km.tables[layer][u][o] for layer in mine
                             if km.tables[layer][u][o] != BOTTOM} for o in range(d)])
        return records
    return [measurement_basis(construction.registers[u], per_user.get(u, {}))[1]
            for u in construction.users]


def _decode(construction: Construction, slots, settings: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
    values = np.full(settings.shape, BOTTOM, dtype=np.int64)
    if settings.shape[0] == 0:
        return values
    combos, inverse = np.unique(settings, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for ci, combo in enumerate(combos):
        rows = np.nonzero(inverse == ci)[0]
        tables = _user_tables(construction, slots, combo)
        for j, t in enumerate(tables):
            cols = [s for s, (u, _) in enumerate(slots) if u == construction.users[j]]
            if cols:
                values[np.ix_(rows, cols)] = t[outcomes[rows, j]][:, cols]
    return values


def run_session(source: Union[Construction, ConstructionPlan], config: ProtocolConfig) -> SessionTranscript:
    """Simulate ``config.rounds`` rounds; fully determined by ``config.seed``."""
    c = build_from_plan(source) if isinstance(source, ConstructionPlan) else source
    R, seed = config.rounds, config.seed
    slots = slots_of(c)
    n = len(c.users)
    dims = c.state.dims

    settings = np.zeros((R, len(slots)), dtype=np.int8)
    tb = config.test_bias
    for s, (_, layer) in enumerate(slots):
        if tb > 0 and testable(c, layer):
            x = streams.uniforms(seed, "setting", s, 0, R)
            settings[:, s] = np.where(x < 1 - tb, 0, np.where(x < 1 - tb / 2, 1, 2))

    ideal = streams.uniforms(seed, "noise", 0, 0, R) < config.noise_v
    u_out = streams.uniforms(seed, "outcome", 0, 0, R)
    outcomes = np.empty((R, n), dtype=np.int64)
    for j in range(n):
        outcomes[:, j] = np.minimum((streams.uniforms(seed, "uniform", j, 0, R) * dims[j]).astype(np.int64),
                                    dims[j] - 1)
    coins = np.empty((R, len(slots)), dtype=np.int8)
    for s in range(len(slots)):
        coins[:, s] = streams.uniforms(seed, "coin", s, 0, R) < 0.5

    combos, inverse = np.unique(settings, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for ci, combo in enumerate(combos):
        rows = np.nonzero((inverse == ci) & ideal)[0]
        if rows.size == 0:
            continue
        if not combo.any():
            picked = sample_from(c.state.probabilities, u_out[rows])
            outcomes[rows] = c.state.support[picked]
            continue
        per_user: dict = {u: {} for u in c.users}
        for (u, layer), code in zip(slots, combo):
            if code:
                per_user[u][layer] = CODES[code]
        probs, _ = outcome_distribution(c, per_user)
        flat = sample_from(probs, u_out[rows])
        outcomes[rows] = np.stack(np.unravel_index(flat, probs.shape), axis=1)

    values = _decode(c, slots, settings, outcomes)
    values = np.where(values == COIN, coins, values)
    return SessionTranscript(c, config, slots, settings, outcomes, coins, values)


def read_transcript(path: str | Path, construction: Construction,
                    config: ProtocolConfig) -> SessionTranscript:
    return parse_transcript(Path(path).read_text(encoding="utf-8"), construction, config)


def parse_transcript(text: str, construction: Construction, config: ProtocolConfig) -> SessionTranscript:
    """Rebuild a transcript from its CSV form (the construction and config are not stored in it)."""
    rows = list(csv.DictReader(io.StringIO(text)))
    slots = slots_of(construction)
    users = list(construction.users)
    R = max((int(r["round"]) for r in rows), default=-1) + 1
    settings = np.zeros((R, len(slots)), dtype=np.int8)
    outcomes = np.zeros((R, len(users)), dtype=np.int64)
    coins = np.zeros((R, len(slots)), dtype=np.int8)
    pending = []
    for row in rows:
        r, u = int(row["round"]), row["user"]
        idx = [i for i, (v, _) in enumerate(slots) if v == u]
        if row["setting"] != "-":
            for i, code in zip(idx, row["setting"].split(".")):
                settings[r, i] = CODES.index(code)
        symbol, _, flips = row["outcome_symbol"].partition("/")
        outcomes[r, users.index(u)] = int(symbol)
        pending.append((r, idx, flips))
    raw = _decode(construction, slots, settings, outcomes)
    for r, idx, flips in pending:
        used = [i for i in idx if raw[r, i] == COIN]
        for i, bit in zip(used, flips):
            coins[r, i] = int(bit)
    values = np.where(raw == COIN, coins, raw)
    return SessionTranscript(construction, config, slots, settings, outcomes, coins, values)


# ---------------------------------------------------------------------------
# sifting and estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SiftResult:
    key: np.ndarray
    test: np.ndarray


def sift(transcript: SessionTranscript, layers=None) -> dict:
    """Key-round and test-round indices for each layer."""
    layers = transcript.construction.keymap.layers if layers is None else [frozenset(k) for k in layers]
    out = {}
    for layer in layers:
        cls = transcript.classification(layer)
        out[layer] = SiftResult(np.nonzero(cls == KEY)[0], np.nonzero(cls == TEST)[0])
    return out


@dataclass(frozen=True)
class ParameterEstimate:
    qz: float
    qx: float
    sacrificed: int
    tests: int


def ideal_parity(construction: Construction, layer: frozenset, codes: Mapping[str, int]) -> float:
    """Noise-free expectation of the product of ±1 test outcomes for one setting combination."""
    u = construction.keymap.members(layer)[0]
    node = _find_node(construction.registers[u], layer)
    if isinstance(node, Leaf):
        ys = sum(1 for c in codes.values() if c == 2)
        return 0.0 if ys % 2 else float((-1) ** (ys // 2))
    phases = {v: (0.0 if c == 1 else math.pi / 2) for v, c in codes.items()}
    return lifted_parity_expectation(construction, layer, phases)


def h2(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def estimate_parameters(transcript: SessionTranscript, layer) -> ParameterEstimate:
    """QZ from disclosed key rounds, QX from even-y test rounds.

    QZ is the fraction of disclosed key rounds (excluding those where every
    member read bottom) in which members disagree. QX averages
    (1 - observed * ideal) / 2 over test rounds with an even number of y
    settings, the ideal parity coming from the exact state.
    """
    layer = frozenset(layer)
    cols = transcript.layer_slots(layer)
    vals = transcript.values[:, cols]

    z_rows = np.nonzero(transcript.sacrificed[layer])[0]
    z_vals = vals[z_rows]
    z_vals = z_vals[~np.all(z_vals == BOTTOM, axis=1)]
    if len(z_vals) == 0:
        raise InsufficientData("QZ", layer)
    qz = float(np.mean(np.any(z_vals != z_vals[:, :1], axis=1)))

    t_rows = np.nonzero(transcript.classification(layer) == TEST)[0]
    codes = transcript.settings[np.ix_(t_rows, cols)]
    t_vals = vals[t_rows]
    usable = (np.sum(codes == 2, axis=1) % 2 == 0) & np.all(t_vals >= 0, axis=1)
    if not usable.any():
        raise InsufficientData("QX", layer)
    codes, t_vals = codes[usable], t_vals[usable]
    members = transcript.construction.keymap.members(layer)
    combos, inverse = np.unique(codes, axis=0, return_inverse=True)
    ideals = np.array([ideal_parity(transcript.construction, layer, dict(zip(members, combo)))
                       for combo in combos])
    observed = np.prod(1 - 2 * t_vals, axis=1)
    qx = float(np.mean((1 - observed * ideals[inverse.reshape(-1)]) / 2))
    return ParameterEstimate(qz, qx, len(z_vals), int(usable.sum()))


def secure_fraction(qz: float, qx: float) -> float:
    return max(0.0, 1 - h2(qz) - h2(qx))


# ---------------------------------------------------------------------------
# key ring
# ---------------------------------------------------------------------------


@dataclass
class LayerKey:
    layer: frozenset
    arity: int
    keys: dict                      # member -> np.ndarray of symbols
    qz: Optional[float] = None
    qx: Optional[float] = None
    fraction: float = 0.0
    key_rounds: int = 0
    sacrificed: int = 0
    bottom_rounds: int = 0

    @property
    def raw_length(self) -> int:
        return len(next(iter(self.keys.values())))

    @property
    def secure_length(self) -> float:
        return self.raw_length * self.fraction

    @property
    def agree(self) -> bool:
        ref = next(iter(self.keys.values()))
        return all(np.array_equal(ref, k) for k in self.keys.values())


def pack_hex(symbols: np.ndarray, arity: int) -> str:
    width = max(1, math.ceil(math.log2(arity)))
    bits = ((symbols[:, None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8).ravel()
    return np.packbits(bits).tobytes().hex()


def unpack_hex(text: str, arity: int, length: int) -> np.ndarray:
    width = max(1, math.ceil(math.log2(arity)))
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(text), dtype=np.uint8))[:length * width]
    return (bits.reshape(length, width).astype(np.int64) << np.arange(width - 1, -1, -1)).sum(axis=1)


@dataclass
class KeyRing:
    layers: dict = field(default_factory=dict)  # layer -> LayerKey

    def __getitem__(self, layer) -> LayerKey:
        return self.layers[frozenset(str(u) for u in layer)]

    def to_json(self) -> dict:
        out = []
        for layer in sorted(self.layers, key=layer_key):
            lk = self.layers[layer]
            out.append({
                "layer": sorted(layer),
                "arity": lk.arity,
                "raw_length": lk.raw_length,
                "raw_keys": {u: pack_hex(k, lk.arity) for u, k in sorted(lk.keys.items())},
                "members_agree": lk.agree,
                "QZ": lk.qz,
                "QX": lk.qx,
                "fraction": lk.fraction,
                "secure_length": lk.secure_length,
                "key_rounds": lk.key_rounds,
                "sacrificed": lk.sacrificed,
                "bottom_rounds": lk.bottom_rounds,
            })
        return {"layers": out}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @staticmethod
    def from_json(data: dict) -> "KeyRing":
        ring = KeyRing()
        for e in data["layers"]:
            layer = frozenset(e["layer"])
            keys = {u: unpack_hex(h, e["arity"], e["raw_length"]) for u, h in e["raw_keys"].items()}
            ring.layers[layer] = LayerKey(layer, e["arity"], keys, e["QZ"], e["QX"], e["fraction"],
                                          e["key_rounds"], e["sacrificed"], e["bottom_rounds"])
        return ring


def finalize_keys(transcript: SessionTranscript, estimates: Mapping) -> KeyRing:
    """Raw sifted keys per layer plus the asymptotic secure fraction.

    Kept rounds: key rounds not disclosed and where no member read bottom.
    ``estimates`` maps layers to ParameterEstimate (or None when the
    estimate was impossible; the fraction is then 0).
    """
    ring = KeyRing()
    km = transcript.construction.keymap
    for layer in km.layers:
        cols = transcript.layer_slots(layer)
        is_key = transcript.classification(layer) == KEY
        sac = transcript.sacrificed[layer]
        vals = transcript.values[:, cols]
        any_bottom = np.any(vals == BOTTOM, axis=1)
        keep = is_key & ~sac & ~any_bottom
        members = km.members(layer)
        est = estimates.get(layer)
        lk = LayerKey(layer, km.arity[layer], {u: vals[keep, i] for i, u in enumerate(members)},
                      key_rounds=int(is_key.sum()), sacrificed=int(sac.sum()),
                      bottom_rounds=int((is_key & ~sac & any_bottom).sum()))
        if est is not None:
            lk.qz, lk.qx = est.qz, est.qx
            lk.fraction = secure_fraction(est.qz, est.qx)
        ring.layers[layer] = lk
    return ring


def run_protocol(source, config: ProtocolConfig) -> tuple[SessionTranscript, KeyRing]:
    """Session, per-layer estimation and key finalization in one call."""
    transcript = run_session(source, config)
    estimates = {}
    for layer in transcript.construction.keymap.layers:
        try:
            estimates[layer] = estimate_parameters(transcript, layer)
        except InsufficientData:
            estimates[layer] = None
    return transcript, finalize_keys(transcript, estimates)
