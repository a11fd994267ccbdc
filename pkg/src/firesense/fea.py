"""Linear 3D frame oracle with temperature-degraded stiffness.

Every element is a two-node Euler-Bernoulli beam-column with 6 DoFs per
node. Heating scales the element modulus by the EN 1993-1-2 reduction factor
and adds the fixed-end axial force of restrained expansion. Ground nodes are
fully fixed. The response is linear in the loads for fixed temperatures, so
incremental stepping reproduces the single secant solve at the final state.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix
from scipy.sparse.linalg import splu

from .errors import SingularSystem
from .structgen import SECTION_SIDE, FirePoint, Structure
from .thermal import SpreadParams, element_temperature_array

log = logging.getLogger(__name__)

AMBIENT_C = 20.0
GPA_TO_KPA = 1.0e6  # stiffness in kN/m^2, loads in kN and kN/m


@dataclass(frozen=True)
class SectionProps:
    area: float
    I_y: float
    I_z: float
    J: float

    @classmethod
    def square(cls, b: float = SECTION_SIDE) -> "SectionProps":
        return cls(area=b * b, I_y=b ** 4 / 12.0, I_z=b ** 4 / 12.0, J=0.1406 * b ** 4)


def _load_kE_table():
    raw = json.loads(resources.files("firesense").joinpath("data/en1993_kE.json").read_text())
    return tuple(zip(raw["temperature_C"], raw["k_E"]))


@dataclass(frozen=True)
class ThermalMaterialLaw:
    eta_E_table: tuple = field(default_factory=_load_kE_table)
    alpha_thermal: float = 1.2e-5
    poisson: float = 0.3

    def __post_init__(self):
        t = np.array([p[0] for p in self.eta_E_table], dtype=float)
        eta = np.array([p[1] for p in self.eta_E_table], dtype=float)
        if np.any(np.diff(t) <= 0) or np.any(np.diff(eta) > 0):
            raise ValueError("reduction table must have increasing T and non-increasing eta")
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_eta", eta)

    def eta(self, temperature_c) -> np.ndarray:
        """Reduction factor at absolute temperature, linearly interpolated."""
        return np.interp(temperature_c, self._t, self._eta)

    def eta_for_rise(self, rise) -> np.ndarray:
        rise = np.asarray(rise, dtype=float)
        t_max = self._t[-1]
        hot = rise > t_max - AMBIENT_C
        if np.any(hot):
            log.warning("%d element(s) above %.0f degC rise; clamping", int(hot.sum()), t_max - AMBIENT_C)
        return self.eta(np.minimum(rise + AMBIENT_C, t_max))


@dataclass(frozen=True)
class LoadSteps:
    gravity_increment: float = 0.10
    thermal_increment: float = 0.01
    incremental: bool = True

    @classmethod
    def secant(cls) -> "LoadSteps":
        return cls(incremental=False)

    def factors(self, increment: float) -> np.ndarray:
        n = int(round(1.0 / increment))
        return np.arange(1, n + 1) / n


@dataclass
class SimResult:
    structure_id: int
    scenario_id: str
    node_displacements: dict[int, tuple]
    node_idr: dict[int, float]
    midr: float
    excluded_nodes: int = 0

    def to_dict(self, with_displacements: bool = True) -> dict:
        d = {
            "structure_id": self.structure_id,
            "scenario_id": self.scenario_id,
            "midr": self.midr,
            "node_idr": {str(k): v for k, v in self.node_idr.items()},
            "excluded_nodes": self.excluded_nodes,
        }
        if with_displacements:
            d["node_displacements"] = {str(k): list(v) for k, v in self.node_displacements.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimResult":
        return cls(
            structure_id=d["structure_id"],
            scenario_id=d["scenario_id"],
            node_displacements={int(k): tuple(v) for k, v in d.get("node_displacements", {}).items()},
            node_idr={int(k): float(v) for k, v in d["node_idr"].items()},
            midr=float(d["midr"]),
            excluded_nodes=d.get("excluded_nodes", 0),
        )


def local_stiffness(L: float, A: float, Iy: float, Iz: float, J: float, E: float, G: float) -> np.ndarray:
    """12x12 element stiffness in local axes, DoF order (u, v, w, rx, ry, rz) per node."""
    k = np.zeros((12, 12))
    ea = E * A / L
    k[0, 0] = k[6, 6] = ea
    k[0, 6] = k[6, 0] = -ea
    gj = G * J / L
    k[3, 3] = k[9, 9] = gj
    k[3, 9] = k[9, 3] = -gj
    # bending in the local x-y plane (about z)
    c = E * Iz / L ** 3
    idx = [1, 5, 7, 11]
    kz = c * np.array([
        [12, 6 * L, -12, 6 * L],
        [6 * L, 4 * L * L, -6 * L, 2 * L * L],
        [-12, -6 * L, 12, -6 * L],
        [6 * L, 2 * L * L, -6 * L, 4 * L * L],
    ])
    k[np.ix_(idx, idx)] = kz
    # bending in the local x-z plane (about y)
    c = E * Iy / L ** 3
    idx = [2, 4, 8, 10]
    ky = c * np.array([
        [12, -6 * L, -12, -6 * L],
        [-6 * L, 4 * L * L, 6 * L, 2 * L * L],
        [-12, 6 * L, 12, 6 * L],
        [-6 * L, 2 * L * L, 6 * L, 4 * L * L],
    ])
    k[np.ix_(idx, idx)] = ky
    return k


def rotation(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Rows are the local x, y, z axes expressed in global coordinates."""
    ex = (xb - xa) / np.linalg.norm(xb - xa)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(ex @ ref) > 0.999:
        ref = np.array([1.0, 0.0, 0.0])
    ey = np.cross(ref, ex)
    ey /= np.linalg.norm(ey)
    ez = np.cross(ex, ey)
    return np.vstack([ex, ey, ez])


def uniform_load_fixed_end(L: float, q_local: np.ndarray) -> np.ndarray:
    """Equivalent nodal loads (local) of a uniform member load q = (qx, qy, qz) per length."""
    qx, qy, qz = q_local
    f = np.zeros(12)
    f[0] = f[6] = qx * L / 2
    f[1] = f[7] = qy * L / 2
    f[5], f[11] = qy * L * L / 12, -qy * L * L / 12
    f[2] = f[8] = qz * L / 2
    f[4], f[10] = -qz * L * L / 12, qz * L * L / 12
    return f


class FrameModel:
    """Precomputed assembly data for one structure."""

    def __init__(self, structure: Structure, law: ThermalMaterialLaw | None = None,
                 section: SectionProps | None = None, fixed_nodes=None):
        self.structure = structure
        self.law = law or ThermalMaterialLaw()
        self.section = section or SectionProps.square()
        s = self.section
        pos = structure.node_position()
        xyz = structure.node_coords()
        n_nodes = len(structure.nodes)
        self.ndof = 6 * n_nodes
        if fixed_nodes is None:
            fixed_nodes = [n.id for n in structure.nodes if n.h == 0]
        fixed = np.zeros(self.ndof, dtype=bool)
        for nid in fixed_nodes:
            fixed[6 * pos[nid]:6 * pos[nid] + 6] = True
        self.fixed = fixed
        self.free_map = -np.ones(self.ndof, dtype=int)
        self.free_map[~fixed] = np.arange(int((~fixed).sum()))
        self.n_free = int((~fixed).sum())

        n_el = len(structure.elements)
        self.E0 = structure.material.young_modulus_E0 * GPA_TO_KPA
        g_ratio = 1.0 / (2.0 * (1.0 + self.law.poisson))
        self.k_unit = np.zeros((n_el, 12, 12))
        self.dofs = np.zeros((n_el, 12), dtype=int)
        self.T = np.zeros((n_el, 12, 12))
        self.lengths = np.zeros(n_el)
        self.axis = np.zeros((n_el, 3))
        for i, e in enumerate(structure.elements):
            a, b = pos[e.node_a], pos[e.node_b]
            L = float(np.linalg.norm(xyz[b] - xyz[a]))
            R = rotation(xyz[a], xyz[b])
            T = np.kron(np.eye(4), R)
            k = local_stiffness(L, s.area, s.I_y, s.I_z, s.J, 1.0, g_ratio)
            self.k_unit[i] = T.T @ k @ T
            self.T[i] = T
            self.lengths[i] = L
            self.axis[i] = R[0]
            self.dofs[i] = np.r_[6 * a:6 * a + 6, 6 * b:6 * b + 6]
        rows = np.repeat(self.dofs, 12, axis=1).ravel()
        cols = np.tile(self.dofs, (1, 12)).ravel()
        fr, fc = self.free_map[rows], self.free_map[cols]
        self._ff = (fr >= 0) & (fc >= 0)
        self._ff_rows, self._ff_cols = fr[self._ff], fc[self._ff]
        self._rows, self._cols = rows, cols

        q_global = np.array([0.0, 0.0, -1.0])
        self.F_gravity = np.zeros(self.ndof)
        for i, e in enumerate(structure.elements):
            q_local = self.T[i][:3, :3] @ (q_global * e.gravity_load)
            f = self.T[i].T @ uniform_load_fixed_end(self.lengths[i], q_local)
            np.add.at(self.F_gravity, self.dofs[i], f)
        self.total_gravity = float(sum(e.gravity_load * L for e, L in zip(structure.elements, self.lengths)))

    def moduli(self, temps: np.ndarray) -> np.ndarray:
        return self.law.eta_for_rise(temps) * self.E0

    def element_matrices(self, moduli: np.ndarray) -> np.ndarray:
        return moduli[:, None, None] * self.k_unit

    def stiffness_free(self, moduli: np.ndarray) -> csc_matrix:
        data = self.element_matrices(moduli).ravel()[self._ff]
        return coo_matrix((data, (self._ff_rows, self._ff_cols)), shape=(self.n_free, self.n_free)).tocsc()

    def stiffness_full(self, moduli: np.ndarray) -> csc_matrix:
        data = self.element_matrices(moduli).ravel()
        return coo_matrix((data, (self._rows, self._cols)), shape=(self.ndof, self.ndof)).tocsc()

    def thermal_loads(self, moduli: np.ndarray, temps: np.ndarray) -> np.ndarray:
        n = moduli * self.section.area * self.law.alpha_thermal * np.asarray(temps, dtype=float)
        F = np.zeros(self.ndof)
        f = np.zeros((len(n), 12))
        f[:, 0:3] = -n[:, None] * self.axis
        f[:, 6:9] = n[:, None] * self.axis
        np.add.at(F, self.dofs.ravel(), f.ravel())
        return F

    def solve(self, moduli: np.ndarray, load: np.ndarray) -> np.ndarray:
        K = self.stiffness_free(moduli)
        u = np.zeros(self.ndof)
        if self.n_free == 0:
            return u
        u[~self.fixed] = spd_solve(K, load[~self.fixed])
        return u

    def reactions(self, moduli: np.ndarray, load: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Support reactions (full-length vector, zero at free DoFs)."""
        r = self.stiffness_full(moduli) @ u - load
        r[~self.fixed] = 0.0
        return r


def spd_solve(K: csc_matrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve that rejects matrices that are not positive definite.

    Diagonal pivoting with a symmetric ordering turns the LU factors into an
    LDL^T factorization, so a positive definite matrix has all-positive pivots.
    """
    try:
        lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    except RuntimeError as exc:  # exactly singular
        raise SingularSystem(str(exc)) from exc
    pivots = lu.U.diagonal()
    scale = float(np.abs(K.diagonal()).max())
    if (not np.array_equal(lu.perm_r, lu.perm_c)
            or not np.all(np.isfinite(pivots))
            or pivots.min() <= 1e-12 * scale):
        raise SingularSystem("stiffness matrix is not positive definite")
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("non-finite displacements")
    return x


def _temps_array(structure: Structure, element_temps) -> np.ndarray:
    if isinstance(element_temps, dict):
        return np.array([element_temps[e.id] for e in structure.elements], dtype=float)
    return np.asarray(element_temps, dtype=float)


def solve_displacements(structure: Structure, element_temps, law: ThermalMaterialLaw | None = None,
                        steps: LoadSteps = LoadSteps(), model: FrameModel | None = None,
                        gravity: bool = True) -> np.ndarray:
    """Final displacement vector (6 per node, in ``structure.nodes`` order)."""
    model = model or FrameModel(structure, law)
    temps = _temps_array(structure, element_temps)
    if np.any(temps < 0):
        raise ValueError("element temperature rises must be non-negative")
    Fg = model.F_gravity if gravity else np.zeros(model.ndof)
    if not steps.incremental:
        E = model.moduli(temps)
        return model.solve(E, Fg + model.thermal_loads(E, temps))
    E_amb = model.moduli(np.zeros_like(temps))
    u = np.zeros(model.ndof)
    # ambient stiffness is constant through the gravity stage
    if model.n_free:
        K = model.stiffness_free(E_amb)
        for lam in steps.factors(steps.gravity_increment):
            u = np.zeros(model.ndof)
            u[~model.fixed] = spd_solve(K, lam * Fg[~model.fixed])
    for mu in steps.factors(steps.thermal_increment):
        t_mu = mu * temps
        E = model.moduli(t_mu)
        u = model.solve(E, Fg + model.thermal_loads(E, t_mu))
    return u


def compute_idr(displacements, structure: Structure) -> tuple[dict[int, float], int]:
    """Per-node interstory drift (percent) and the number of nodes lacking a counterpart below."""
    grid = structure.room_grid
    H = grid.story_height
    if not isinstance(displacements, dict):
        arr = np.asarray(displacements).reshape(-1, 6)
        displacements = {n.id: arr[i] for i, n in enumerate(structure.nodes)}
    key = {}
    for n in structure.nodes:
        key[(round(n.x / grid.room_len_x), round(n.y / grid.room_len_y), n.h)] = n.id
    idr, excluded = {}, 0
    for n in structure.nodes:
        if n.h < 1:
            continue
        below = key.get((round(n.x / grid.room_len_x), round(n.y / grid.room_len_y), n.h - 1))
        if below is None:
            excluded += 1
            continue
        du = np.asarray(displacements[n.id][:2]) - np.asarray(displacements[below][:2])
        idr[n.id] = float(math.hypot(du[0], du[1]) / H * 100.0)
    return idr, excluded


def _result(structure, u, scenario_id) -> SimResult:
    arr = u.reshape(-1, 6)
    disp = {n.id: tuple(float(v) for v in arr[i]) for i, n in enumerate(structure.nodes)}
    idr, excluded = compute_idr(disp, structure)
    if excluded:
        log.debug("structure %s: %d node(s) without a counterpart below", structure.id, excluded)
    return SimResult(structure.id, scenario_id, disp, idr, max(idr.values(), default=0.0), excluded)


def assemble_and_solve(structure: Structure, element_temps, law: ThermalMaterialLaw | None = None,
                       steps: LoadSteps = LoadSteps(), scenario_id: str = "",
                       model: FrameModel | None = None, gravity: bool = True) -> SimResult:
    u = solve_displacements(structure, element_temps, law, steps, model, gravity)
    return _result(structure, u, scenario_id)


def gravity_analysis(structure: Structure, law: ThermalMaterialLaw | None = None,
                     steps: LoadSteps = LoadSteps.secant(), model: FrameModel | None = None) -> SimResult:
    zero = np.zeros(len(structure.elements))
    return assemble_and_solve(structure, zero, law, steps, "gravity", model)


def run_scenario(structure: Structure, fire: FirePoint, params: SpreadParams = SpreadParams(),
                 law: ThermalMaterialLaw | None = None, steps: LoadSteps = LoadSteps.secant(),
                 scenario_id: str = "", model: FrameModel | None = None) -> SimResult:
    """Temperatures from the fire point, then the thermal-structural solve."""
    temps = element_temperature_array(structure, fire, params)
    return assemble_and_solve(structure, temps, law, steps, scenario_id, model)
