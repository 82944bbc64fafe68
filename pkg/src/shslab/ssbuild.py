"""Per-segment continuous-time state-space assembly in the synchronous dq frame.

State ordering is fixed as [resource | network lines | aux branches | loads]:

* resource block (6):  i_pv, v_dc, i_t_q, i_t_d, v_Cs, v_Cb
* each internal line (2):  I_{u}_{v}_q, I_{u}_{v}_d
* each aux branch (2):     I_{aux}_q, I_{aux}_d
* each loaded bus (4):     V_{k}_q, V_{k}_d, I_LL{k}_q, I_LL{k}_d

Circuit conventions (signs fixed once, covered by oracle tests):

* series R-L from a to b:  L di_q/dt = V_a,q - V_b,q - R i_q + w L i_d
  (d axis mirrors with -w L i_q); the current contributes -i to a's KCL
  and +i to b's KCL.
* loaded bus k:  C dV_q/dt = sum(incident currents, q) - V_q/R - I_LL_q + w C V_d.
* aux branch at bus k: same R-L stamp with the half impedance; the far-end
  voltage is the disturbance channel u2, entering with -1/L.
* a bus without a load has no voltage state and is treated as grounded
  (only reachable through hand-built test segments).

Contingency transforms keep the state dimension fixed:

* short_circuit: the line is split at its midpoint with a fault resistance
  R_f to ground there; the differential (fault) current mode is eliminated
  quasi-statically, leaving the normal series stamp plus an extra voltage
  drain G (V_u + V_v) at both end buses, G = inv([[r, -wl], [wl, r]])/2 with
  r = 2 R_f + R/2 and wl = w L/2. R_f -> inf recovers the normal stamp.
* line_outage: the line's current states decay as di/dt = -(R/L) i and all
  coupling to bus voltages is removed in both directions.
* line_disconnect: open at one end only; the open end's voltage leaves the
  KVL and the open end's KCL no longer sees the line current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BuildError, NetworkFormatError
from .grid import ControlInput, PvbParams
from .segmentation import SegmentModel
from .util import parallel_map

PVB_STATE_NAMES = ("i_pv", "v_dc", "i_t_q", "i_t_d", "v_Cs", "v_Cb")

_KINDS = ("normal", "short_circuit", "line_outage", "line_disconnect")


@dataclass(frozen=True)
class ContingencySpec:
    """One structural scenario. line is required for every kind but 'normal'."""

    kind: str
    line: tuple[int, int] | None = None
    R_f: float = 1e-3
    open_end: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise BuildError(f"unknown contingency kind '{self.kind}'")
        if self.kind == "normal":
            if self.line is not None:
                raise BuildError("'normal' takes no line reference")
        else:
            if self.line is None:
                raise BuildError(f"'{self.kind}' needs a line reference")
        if self.kind == "short_circuit" and not self.R_f > 0:
            raise BuildError(f"fault resistance must be > 0, got {self.R_f}")
        if self.kind == "line_disconnect":
            if self.open_end is None or self.open_end not in self.line:
                raise BuildError("'line_disconnect' needs open_end at one line endpoint")

    @classmethod
    def normal(cls) -> "ContingencySpec":
        return cls(kind="normal")

    @classmethod
    def short_circuit(cls, line: tuple[int, int], R_f: float = 1e-3) -> "ContingencySpec":
        return cls(kind="short_circuit", line=tuple(line), R_f=R_f)

    @classmethod
    def line_outage(cls, line: tuple[int, int]) -> "ContingencySpec":
        return cls(kind="line_outage", line=tuple(line))

    @classmethod
    def line_disconnect(cls, line: tuple[int, int], open_end: int) -> "ContingencySpec":
        return cls(kind="line_disconnect", line=tuple(line), open_end=open_end)

    def name(self) -> str:
        if self.kind == "normal":
            return "normal"
        u, v = sorted(self.line)
        return f"{self.kind}_{u}_{v}"


def contingency_from_json(obj: dict, loc: str = "$") -> ContingencySpec:
    kind = obj.get("kind")
    if kind not in _KINDS:
        raise NetworkFormatError(f"unknown contingency kind '{kind}'", loc)
    line = tuple(obj["line"]) if "line" in obj else None
    try:
        if kind == "normal":
            return ContingencySpec.normal()
        if kind == "short_circuit":
            return ContingencySpec.short_circuit(line, R_f=float(obj.get("R_f_ohm", 1e-3)))
        if kind == "line_outage":
            return ContingencySpec.line_outage(line)
        return ContingencySpec.line_disconnect(line, open_end=obj.get("open_end"))
    except BuildError as exc:
        raise NetworkFormatError(str(exc), loc) from exc


def contingency_to_json(c: ContingencySpec) -> dict:
    out: dict = {"kind": c.kind}
    if c.line is not None:
        out["line"] = list(c.line)
    if c.kind == "short_circuit":
        out["R_f_ohm"] = c.R_f
    if c.kind == "line_disconnect":
        out["open_end"] = c.open_end
    return out


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Continuous-time model of one scenario, linearized at its operating point.

    x_op is the absolute operating-point state; the model states are
    deviations from it.
    """

    alpha: int
    name: str
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D2: np.ndarray
    state_labels: tuple[str, ...]
    u2_labels: tuple[str, ...]
    x_op: np.ndarray
    omega_nom: float = 0.0

    def __post_init__(self):
        for fname in ("A", "B1", "B2", "C", "D2", "x_op"):
            arr = np.array(getattr(self, fname), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, fname, arr)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise BuildError("A must be square")
        if self.B1.shape != (n, 3):
            raise BuildError(f"B1 must be {n}x3, got {self.B1.shape}")
        if self.B2.shape[0] != n or self.B2.shape[1] % 2:
            raise BuildError(f"B2 must be {n}x(2*n_aux), got {self.B2.shape}")
        if self.C.shape[1] != n or self.D2.shape != (self.C.shape[0], self.B2.shape[1]):
            raise BuildError("C/D2 dimensions inconsistent with A/B2")
        if len(self.state_labels) != n or len(self.u2_labels) != self.B2.shape[1]:
            raise BuildError("label lists inconsistent with matrix dimensions")
        if self.x_op.shape != (n,):
            raise BuildError("x_op length inconsistent with A")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def n_aux(self) -> int:
        return self.B2.shape[1] // 2


@dataclass(frozen=True, eq=False)
class ScenarioFamily:
    """All scenarios of one segment over a shared state labeling; index 0 is normal."""

    segment_id: int
    scenarios: tuple[StateSpaceModel, ...]

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise BuildError("family needs at least one scenario")
        first = self.scenarios[0]
        for i, sc in enumerate(self.scenarios):
            if sc.alpha != i:
                raise BuildError(f"scenario {i} carries alpha={sc.alpha}")
            if sc.state_labels != first.state_labels or sc.u2_labels != first.u2_labels:
                raise BuildError(f"scenario {i} labels differ from scenario 0")
            if sc.p != first.p:
                raise BuildError(f"scenario {i} output dimension differs")

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i: int) -> StateSpaceModel:
        return self.scenarios[i]

    @property
    def names(self) -> list[str]:
        return [sc.name for sc in self.scenarios]

    @property
    def state_labels(self) -> tuple[str, ...]:
        return self.scenarios[0].state_labels


class _Index:
    """Label layout for one segment: [pvb | lines | aux | loads]."""

    def __init__(self, segment: SegmentModel):
        self.segment = segment
        self.labels: list[str] = []
        self.u2_labels: list[str] = []
        self.has_pvb = segment.pvb_bus is not None
        if self.has_pvb:
            self.labels.extend(PVB_STATE_NAMES)
        self.line_i: dict[tuple[int, int], tuple[int, int]] = {}
        for ln in segment.internal_lines:
            u, v = ln.key()
            self.line_i[(u, v)] = (len(self.labels), len(self.labels) + 1)
            self.labels += [f"I_{u}_{v}_q", f"I_{u}_{v}_d"]
        self.aux_i: dict[str, tuple[int, int]] = {}
        self.u2_i: dict[str, tuple[int, int]] = {}
        for a in segment.aux_buses:
            self.aux_i[a.aux_id] = (len(self.labels), len(self.labels) + 1)
            self.labels += [f"I_{a.aux_id}_q", f"I_{a.aux_id}_d"]
            self.u2_i[a.aux_id] = (len(self.u2_labels), len(self.u2_labels) + 1)
            self.u2_labels += [f"V_{a.aux_id}_q", f"V_{a.aux_id}_d"]
        self.vq: dict[int, int] = {}
        self.vd: dict[int, int] = {}
        self.jq: dict[int, int] = {}
        self.jd: dict[int, int] = {}
        for k in segment.bus_ids:
            if segment.bus(k).load is None:
                continue
            base = len(self.labels)
            self.vq[k], self.vd[k] = base, base + 1
            self.jq[k], self.jd[k] = base + 2, base + 3
            self.labels += [f"V_{k}_q", f"V_{k}_d", f"I_LL{k}_q", f"I_LL{k}_d"]
        self.n = len(self.labels)
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    def shunt_C(self, bus: int) -> float:
        return self.segment.bus(bus).load.C


def _resolve_line_mode(segment: SegmentModel, contingency: ContingencySpec):
    """Return (line key -> contingency) map, validating the line reference."""
    if contingency.kind == "normal":
        return {}
    key = tuple(sorted(contingency.line))
    internal = {ln.key() for ln in segment.internal_lines}
    if key not in internal:
        raise BuildError(
            f"contingency references line {key} which is not internal to "
            f"segment {segment.id} (internal lines: {sorted(internal)})")
    return {key: contingency}


def _fault_drain(R: float, L: float, R_f: float, omega: float) -> np.ndarray:
    """Quasi-static midpoint-fault conductance G with drain G (V_u + V_v) per end bus."""
    r = 2.0 * R_f + R / 2.0
    wl = omega * L / 2.0
    M = np.array([[r, -wl], [wl, r]])
    return np.linalg.inv(M) / 2.0


def pvb_rhs(xp, vbus, u1, p: PvbParams, omega: float) -> np.ndarray:
    """Resource element equations: boost PV stage, DC link, inverter filter,
    two-capacitor battery. xp = (i_pv, v_dc, i_t_q, i_t_d, v_Cs, v_Cb),
    vbus = terminal bus voltage (q, d), u1 = (d, delta, m_a) absolute."""
    i_pv, v_dc, i_tq, i_td, v_cs, v_cb = xp
    Vq, Vd = vbus
    d, delta, m_a = u1
    v_pv = (i_pv - p.I_PV) * p.R_PV
    denom = 1.0 + p.R_t / p.R_s + p.R_t / p.R_e
    i_bat = ((v_dc - v_cs) / p.R_s + (v_dc - v_cb) / p.R_e) / denom
    v_b = v_dc - p.R_t * i_bat
    e_q = 0.5 * m_a * v_dc * math.sin(delta)
    e_d = 0.5 * m_a * v_dc * math.cos(delta)
    i_inv = 0.75 * m_a * (math.cos(delta) * i_td + math.sin(delta) * i_tq)
    return np.array([
        (v_pv - (1.0 - d) * v_dc) / p.L_1PV,
        ((1.0 - d) * i_pv - i_inv - i_bat) / p.C_PV,
        (e_q - p.R_2PV * i_tq - Vq) / p.L_2PV + omega * i_td,
        (e_d - p.R_2PV * i_td - Vd) / p.L_2PV - omega * i_tq,
        (v_b - v_cs) / (p.R_s * p.C_s),
        (v_b - v_cb) / (p.R_e * p.C_b),
    ])


def segment_rhs(segment: SegmentModel, contingency: ContingencySpec,
                x: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Full element-equation right-hand side in absolute coordinates.

    This evaluates the physics directly (no stamped coefficients) so it can
    back equilibrium solving and derivative cross-checks of the stamped A.
    """
    idx = _Index(segment)
    x = np.asarray(x, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if x.shape != (idx.n,):
        raise BuildError(f"state vector must have length {idx.n}")
    modes = _resolve_line_mode(segment, contingency)
    w = segment.omega_nom
    dx = np.zeros(idx.n)
    # accumulated KCL current into each loaded bus, (q, d)
    inj = {k: np.zeros(2) for k in idx.vq}

    def bus_V(k: int) -> np.ndarray:
        if k in idx.vq:
            return np.array([x[idx.vq[k]], x[idx.vd[k]]])
        return np.zeros(2)

    for ln in segment.internal_lines:
        u, v = ln.key()
        iq, id_ = idx.line_i[(u, v)]
        I = np.array([x[iq], x[id_]])
        mode = modes.get((u, v))
        if mode is not None and mode.kind == "line_outage":
            dx[iq] = -(ln.R / ln.L) * I[0]
            dx[id_] = -(ln.R / ln.L) * I[1]
            continue
        Vu, Vv = bus_V(u), bus_V(v)
        drop_u = drop_v = False
        if mode is not None and mode.kind == "line_disconnect":
            drop_u = mode.open_end == u
            drop_v = mode.open_end == v
        eu = np.zeros(2) if drop_u else Vu
        ev = np.zeros(2) if drop_v else Vv
        dx[iq] = (eu[0] - ev[0] - ln.R * I[0]) / ln.L + w * I[1]
        dx[id_] = (eu[1] - ev[1] - ln.R * I[1]) / ln.L - w * I[0]
        if u in inj and not drop_u:
            inj[u] -= I
        if v in inj and not drop_v:
            inj[v] += I
        if mode is not None and mode.kind == "short_circuit":
            G = _fault_drain(ln.R, ln.L, mode.R_f, w)
            drain = G @ (Vu + Vv)
            if u in inj:
                inj[u] -= drain
            if v in inj:
                inj[v] -= drain

    for a in segment.aux_buses:
        iq, id_ = idx.aux_i[a.aux_id]
        cq, cd = idx.u2_i[a.aux_id]
        I = np.array([x[iq], x[id_]])
        Vk = bus_V(a.attach_bus)
        Va = np.array([u2[cq], u2[cd]])
        dx[iq] = (Vk[0] - Va[0] - a.R * I[0]) / a.L + w * I[1]
        dx[id_] = (Vk[1] - Va[1] - a.R * I[1]) / a.L - w * I[0]
        if a.attach_bus in inj:
            inj[a.attach_bus] -= I

    if idx.has_pvb:
        pv_bus = segment.pvb_bus
        dx[0:6] = pvb_rhs(x[0:6], bus_V(pv_bus), u1, segment.bus(pv_bus).pvb, w)
        if pv_bus in inj:
            inj[pv_bus] += np.array([x[2], x[3]])  # terminal current into the bus

    for k, vqi in idx.vq.items():
        lp = segment.bus(k).load
        vdi, jqi, jdi = idx.vd[k], idx.jq[k], idx.jd[k]
        Vq, Vd = x[vqi], x[vdi]
        Jq, Jd = x[jqi], x[jdi]
        dx[vqi] = (inj[k][0] - Vq / lp.R - Jq) / lp.C + w * Vd
        dx[vdi] = (inj[k][1] - Vd / lp.R - Jd) / lp.C - w * Vq
        dx[jqi] = (Vq - lp.Rl * Jq) / lp.L + w * Jd
        dx[jdi] = (Vd - lp.Rl * Jd) / lp.L - w * Jq
    return dx


def _central_jacobian(f, x0: np.ndarray) -> np.ndarray:
    """Central finite differences, column by column."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(f(x0))
    J = np.zeros((f0.size, x0.size))
    hbase = np.cbrt(np.finfo(float).eps)
    for j in range(x0.size):
        h = hbase * max(abs(x0[j]), 1.0)
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return J


def _stamp_linear(segment: SegmentModel, contingency: ContingencySpec,
                  idx: _Index) -> tuple[np.ndarray, np.ndarray]:
    """Analytic A and B2 entries for everything except the resource block."""
    modes = _resolve_line_mode(segment, contingency)
    w = segment.omega_nom
    n = idx.n
    A = np.zeros((n, n))
    B2 = np.zeros((n, len(idx.u2_labels)))

    for ln in segment.internal_lines:
        u, v = ln.key()
        iq, id_ = idx.line_i[(u, v)]
        R, L = ln.R, ln.L
        mode = modes.get((u, v))
        if mode is not None and mode.kind == "line_outage":
            A[iq, iq] = -R / L
            A[id_, id_] = -R / L
            continue
        A[iq, iq] += -R / L
        A[iq, id_] += w
        A[id_, id_] += -R / L
        A[id_, iq] += -w
        drop_u = drop_v = False
        if mode is not None and mode.kind == "line_disconnect":
            drop_u = mode.open_end == u
            drop_v = mode.open_end == v
        if u in idx.vq and not drop_u:
            A[iq, idx.vq[u]] += 1.0 / L
            A[id_, idx.vd[u]] += 1.0 / L
            Cu = idx.shunt_C(u)
            A[idx.vq[u], iq] += -1.0 / Cu
            A[idx.vd[u], id_] += -1.0 / Cu
        if v in idx.vq and not drop_v:
            A[iq, idx.vq[v]] += -1.0 / L
            A[id_, idx.vd[v]] += -1.0 / L
            Cv = idx.shunt_C(v)
            A[idx.vq[v], iq] += 1.0 / Cv
            A[idx.vd[v], id_] += 1.0 / Cv
        if mode is not None and mode.kind == "short_circuit":
            G = _fault_drain(R, L, mode.R_f, w)
            for a_bus in (u, v):
                if a_bus not in idx.vq:
                    continue
                Ca = idx.shunt_C(a_bus)
                for b_bus in (u, v):
                    if b_bus not in idx.vq:
                        continue
                    A[idx.vq[a_bus], idx.vq[b_bus]] += -G[0, 0] / Ca
                    A[idx.vq[a_bus], idx.vd[b_bus]] += -G[0, 1] / Ca
                    A[idx.vd[a_bus], idx.vq[b_bus]] += -G[1, 0] / Ca
                    A[idx.vd[a_bus], idx.vd[b_bus]] += -G[1, 1] / Ca

    for a in segment.aux_buses:
        iq, id_ = idx.aux_i[a.aux_id]
        cq, cd = idx.u2_i[a.aux_id]
        A[iq, iq] += -a.R / a.L
        A[iq, id_] += w
        A[id_, id_] += -a.R / a.L
        A[id_, iq] += -w
        k = a.attach_bus
        if k in idx.vq:
            A[iq, idx.vq[k]] += 1.0 / a.L
            A[id_, idx.vd[k]] += 1.0 / a.L
            Ck = idx.shunt_C(k)
            A[idx.vq[k], iq] += -1.0 / Ck
            A[idx.vd[k], id_] += -1.0 / Ck
        B2[iq, cq] = -1.0 / a.L
        B2[id_, cd] = -1.0 / a.L

    if idx.has_pvb and segment.pvb_bus in idx.vq:
        Ck = idx.shunt_C(segment.pvb_bus)
        A[idx.vq[segment.pvb_bus], idx.index["i_t_q"]] += 1.0 / Ck
        A[idx.vd[segment.pvb_bus], idx.index["i_t_d"]] += 1.0 / Ck

    for k, vqi in idx.vq.items():
        lp = segment.bus(k).load
        vdi, jqi, jdi = idx.vd[k], idx.jq[k], idx.jd[k]
        A[vqi, vqi] += -1.0 / (lp.R * lp.C)
        A[vqi, vdi] += w
        A[vqi, jqi] += -1.0 / lp.C
        A[vdi, vdi] += -1.0 / (lp.R * lp.C)
        A[vdi, vqi] += -w
        A[vdi, jdi] += -1.0 / lp.C
        A[jqi, vqi] += 1.0 / lp.L
        A[jqi, jqi] += -lp.Rl / lp.L
        A[jqi, jdi] += w
        A[jdi, vdi] += 1.0 / lp.L
        A[jdi, jdi] += -lp.Rl / lp.L
        A[jdi, jqi] += -w
    return A, B2


def build_measurement(segment: SegmentModel, alpha: int = 0,
                      monitored_bus: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Selection-row C over {v_dc, i_t_q, i_t_d, I_LL_q, I_LL_d of the monitored
    load} and D2 as the indicator of the aux-voltage channels.

    The monitored load defaults to the resource bus's own load, falling back
    to the nearest internally connected loaded bus.
    """
    idx = _Index(segment)
    if not idx.has_pvb:
        raise BuildError("segment has no resource bus; measurement set undefined")
    if monitored_bus is None:
        if segment.pvb_bus in idx.jq:
            monitored_bus = segment.pvb_bus
        else:
            adjacent = sorted(
                (ln.to_bus if ln.from_bus == segment.pvb_bus else ln.from_bus)
                for ln in segment.internal_lines
                if segment.pvb_bus in (ln.from_bus, ln.to_bus))
            loaded = [b for b in adjacent if b in idx.jq]
            if not loaded:
                loaded = [b for b in segment.bus_ids if b in idx.jq]
            if not loaded:
                raise BuildError("no loaded bus available to monitor")
            monitored_bus = loaded[0]
    if monitored_bus not in idx.jq:
        raise BuildError(f"requested label absent: bus {monitored_bus} has no load branch")

    rows = ["v_dc", "i_t_q", "i_t_d", f"I_LL{monitored_bus}_q", f"I_LL{monitored_bus}_d"]
    C = np.zeros((len(rows), idx.n))
    for r, lab in enumerate(rows):
        C[r, idx.index[lab]] = 1.0
    D2 = np.zeros((len(rows), len(idx.u2_labels)))
    for i in range(min(len(rows), len(idx.u2_labels))):
        D2[i, i] = 1.0
    return C, D2


def build_state_space(segment: SegmentModel, contingency: ContingencySpec,
                      alpha: int = 0, monitored_bus: int | None = None) -> StateSpaceModel:
    """Assemble one scenario's matrices.

    The resource block rows come from central-difference derivatives of
    pvb_rhs at the scenario's operating point; everything else is stamped
    analytically. The operating point solves segment_rhs = 0 (converter at
    its set point, aux voltages at reference) by Newton iteration; the final
    A is the derivative evaluated at that point.
    """
    idx = _Index(segment)
    w = segment.omega_nom
    B1 = np.zeros((idx.n, 3))

    u1_op = np.zeros(3)
    pvb: PvbParams | None = None
    if idx.has_pvb:
        pvb = segment.bus(segment.pvb_bus).pvb
        op: ControlInput = pvb.operating_point
        u1_op = np.array([op.d, op.delta, op.m_a])

    def jacobian_at(x_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A, B2 = _stamp_linear(segment, contingency, idx)
        if idx.has_pvb:
            vbus = np.zeros(2)
            vq_col = idx.vq.get(segment.pvb_bus)
            if vq_col is not None:
                vbus = np.array([x_ref[vq_col], x_ref[idx.vd[segment.pvb_bus]]])

            def fz(z):
                return pvb_rhs(z[0:6], z[6:8], u1_op, pvb, w)

            Jz = _central_jacobian(fz, np.concatenate([x_ref[0:6], vbus]))
            A[0:6, 0:6] = Jz[:, 0:6]
            if vq_col is not None:
                A[0:6, vq_col] = Jz[:, 6]
                A[0:6, idx.vd[segment.pvb_bus]] = Jz[:, 7]
        return A, B2

    # Newton solve for the operating point; exact in one step once the
    # derivative is evaluated near the solution (the equations are affine in
    # the state), extra iterations polish finite-difference noise away.
    u2_zero = np.zeros(len(idx.u2_labels))
    x_op = np.zeros(idx.n)
    A = B2 = None
    converged = False
    for _ in range(25):
        F = segment_rhs(segment, contingency, x_op, u1_op, u2_zero)
        if np.linalg.norm(F) <= 1e-9 * (1.0 + np.linalg.norm(x_op)):
            converged = True
            break
        A, B2 = jacobian_at(x_op)
        try:
            step = np.linalg.solve(A, F)
        except np.linalg.LinAlgError as exc:
            raise BuildError(
                f"no operating point for scenario '{contingency.name()}': "
                f"state matrix is singular") from exc
        x_op = x_op - step
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(x_op)):
            converged = True
            break
    if not converged:
        resid = np.linalg.norm(segment_rhs(segment, contingency, x_op, u1_op, u2_zero))
        raise BuildError(
            f"operating-point solve did not converge for "
            f"'{contingency.name()}' (residual {resid:.3e})")
    A, B2 = jacobian_at(x_op)

    if idx.has_pvb:
        vbus_op = np.zeros(2)
        if segment.pvb_bus in idx.vq:
            vbus_op = np.array([x_op[idx.vq[segment.pvb_bus]],
                                x_op[idx.vd[segment.pvb_bus]]])

        def fu(u):
            return pvb_rhs(x_op[0:6], vbus_op, u, pvb, w)

        B1[0:6, :] = _central_jacobian(fu, u1_op)

    if idx.has_pvb:
        C, D2 = build_measurement(segment, alpha=alpha, monitored_bus=monitored_bus)
    else:
        C = np.eye(idx.n)
        D2 = np.zeros((idx.n, len(idx.u2_labels)))
        for i in range(min(idx.n, len(idx.u2_labels))):
            D2[i, i] = 1.0

    return StateSpaceModel(
        alpha=alpha, name=contingency.name(), A=A, B1=B1, B2=B2, C=C, D2=D2,
        state_labels=tuple(idx.labels), u2_labels=tuple(idx.u2_labels),
        x_op=x_op, omega_nom=w)


def build_family(segment: SegmentModel, contingencies: list[ContingencySpec],
                 monitored_bus: int | None = None, threads: int = 1) -> ScenarioFamily:
    """Build all scenarios of a segment; the first entry must be 'normal'."""
    if not contingencies:
        raise BuildError("contingency list is empty")
    if contingencies[0].kind != "normal":
        raise BuildError("the first scenario must be 'normal'")

    def build_one(item):
        i, spec = item
        try:
            return build_state_space(segment, spec, alpha=i, monitored_bus=monitored_bus)
        except BuildError as exc:
            raise BuildError(f"scenario {i} ({spec.name()}): {exc}") from exc

    scenarios = parallel_map(build_one, list(enumerate(contingencies)), threads=threads)
    return ScenarioFamily(segment_id=segment.id, scenarios=tuple(scenarios))


# ---------------------------------------------------------------------------
# family (de)serialization
# ---------------------------------------------------------------------------


def family_to_json(family: ScenarioFamily) -> dict:
    return {
        "segment_id": family.segment_id,
        "alpha_names": family.names,
        "state_labels": list(family.state_labels),
        "u2_labels": list(family.scenarios[0].u2_labels),
        "scenarios": [
            {
                "alpha": sc.alpha,
                "name": sc.name,
                "A": sc.A.tolist(),
                "B1": sc.B1.tolist(),
                "B2": sc.B2.tolist(),
                "C": sc.C.tolist(),
                "D2": sc.D2.tolist(),
                "x_op": sc.x_op.tolist(),
                "omega_rad_s": sc.omega_nom,
            }
            for sc in family.scenarios
        ],
    }


def family_from_json(doc: dict) -> ScenarioFamily:
    try:
        labels = tuple(doc["state_labels"])
        u2_labels = tuple(doc["u2_labels"])
        def mat(rows, ncols):
            arr = np.array(rows, dtype=float)
            if arr.size == 0:
                arr = arr.reshape(len(rows), ncols)
            return arr

        scenarios = tuple(
            StateSpaceModel(
                alpha=sc["alpha"], name=sc["name"],
                A=np.array(sc["A"], dtype=float),
                B1=np.array(sc["B1"], dtype=float),
                B2=mat(sc["B2"], len(u2_labels)),
                C=np.array(sc["C"], dtype=float),
                D2=mat(sc["D2"], len(u2_labels)),
                state_labels=labels, u2_labels=u2_labels,
                x_op=np.array(sc["x_op"], dtype=float),
                omega_nom=float(sc.get("omega_rad_s", 0.0)))
            for sc in doc["scenarios"]
        )
        return ScenarioFamily(segment_id=int(doc["segment_id"]), scenarios=scenarios)
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkFormatError(f"malformed family document: {exc}") from exc
