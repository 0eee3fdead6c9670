"""Rotated surface code geometry.

Coordinates live on an integer lattice: data qubits sit at odd/odd points
``(2i+1, 2j+1)`` and measurement ancillas at even/even points ``(2i, 2j)``.
The ancilla at ``(2i, 2j)`` is an X check when ``i + j`` is even.  Weight-2
X checks run along the left and right edges, weight-2 Z checks along the top
and bottom edges.

CNOT order (offsets from the ancilla, one per time step)::

    X checks ("N" shape):  (-1,-1) (-1,+1) (+1,-1) (+1,+1)
    Z checks ("Z" shape):  (-1,-1) (+1,-1) (-1,+1) (+1,+1)

An ancilla fault midway through a check spreads to the last two data qubits
(a hook).  With this order X-check hooks are vertical pairs and Z-check hooks
horizontal pairs, perpendicular to the horizontal X logical and the vertical
Z logical respectively, so no single fault shortens either logical.
Boundary checks idle on the steps whose data qubit is missing.
"""

from __future__ import annotations

from dataclasses import dataclass

X_ORDER = ((-1, -1), (-1, 1), (1, -1), (1, 1))
Z_ORDER = ((-1, -1), (1, -1), (-1, 1), (1, 1))


@dataclass(frozen=True)
class Stabilizer:
    ancilla: int
    basis: str
    support: tuple[int, ...]


@dataclass(frozen=True)
class CodeLayout:
    distance: int
    data_qubits: tuple[tuple[int, int], ...]
    ancilla_qubits: tuple[tuple[str, int, int], ...]
    x_stabilizers: tuple[Stabilizer, ...]
    z_stabilizers: tuple[Stabilizer, ...]
    logical_x_support: tuple[int, ...]
    logical_z_support: tuple[int, ...]
    # four parallel CNOT layers; each entry is (ancilla, data, basis)
    schedule: tuple[tuple[tuple[int, int, str], ...], ...]

    @property
    def n_data(self) -> int:
        return len(self.data_qubits)

    @property
    def n_checks(self) -> int:
        return len(self.ancilla_qubits)

    @property
    def n_physical(self) -> int:
        return self.n_data + self.n_checks

    @property
    def stabilizers(self) -> tuple[Stabilizer, ...]:
        """All checks ordered by ancilla id (equivalently by check index)."""
        return tuple(sorted(self.x_stabilizers + self.z_stabilizers, key=lambda s: s.ancilla))

    def check_index(self, ancilla: int) -> int:
        return ancilla - self.n_data

    def check_basis(self) -> list[str]:
        return [basis for basis, _, _ in self.ancilla_qubits]

    def serialize(self) -> str:
        """Plain-text dump, one entity per line."""
        lines = [f"layout rotated_surface_code d={self.distance}"]
        for q, (x, y) in enumerate(self.data_qubits):
            lines.append(f"data {q} {x} {y}")
        for stab in self.stabilizers:
            basis, x, y = self.ancilla_qubits[self.check_index(stab.ancilla)]
            support = ",".join(str(q) for q in stab.support)
            lines.append(f"ancilla {stab.ancilla} {basis} {x} {y} {support}")
        lines.append("logical X " + ",".join(map(str, self.logical_x_support)))
        lines.append("logical Z " + ",".join(map(str, self.logical_z_support)))
        for step, layer in enumerate(self.schedule):
            pairs = " ".join(f"{a}:{q}" for a, q, _ in layer)
            lines.append(f"cnot_step {step} {pairs}")
        return "\n".join(lines) + "\n"


def _check_type(i: int, j: int) -> str:
    return "X" if (i + j) % 2 == 0 else "Z"


def build_layout(d: int) -> CodeLayout:
    """Build the distance-``d`` rotated surface code."""
    if not isinstance(d, int) or d < 3 or d % 2 == 0:
        raise ValueError(f"distance must be odd and ≥ 3, got {d!r}")

    data_coords = [(2 * i + 1, 2 * j + 1) for j in range(d) for i in range(d)]
    data_index = {c: q for q, c in enumerate(data_coords)}

    ancillas = []
    for j in range(d + 1):
        for i in range(d + 1):
            basis = _check_type(i, j)
            on_lr = i in (0, d)
            on_tb = j in (0, d)
            if on_lr and on_tb:
                continue
            if on_lr and basis != "X":
                continue
            if on_tb and basis != "Z":
                continue
            ancillas.append((basis, 2 * i, 2 * j))

    n_data = len(data_coords)
    x_stabs, z_stabs = [], []
    layers: list[list[tuple[int, int, str]]] = [[], [], [], []]
    for k, (basis, x, y) in enumerate(ancillas):
        anc = n_data + k
        order = X_ORDER if basis == "X" else Z_ORDER
        support = []
        for step, (dx, dy) in enumerate(order):
            q = data_index.get((x + dx, y + dy))
            if q is None:
                continue
            support.append(q)
            layers[step].append((anc, q, basis))
        stab = Stabilizer(anc, basis, tuple(support))
        (x_stabs if basis == "X" else z_stabs).append(stab)

    # X_L along the top row (commutes with the top Z boundary),
    # Z_L along the left column (commutes with the left X boundary).
    logical_x = tuple(data_index[(2 * i + 1, 1)] for i in range(d))
    logical_z = tuple(data_index[(1, 2 * j + 1)] for j in range(d))

    return CodeLayout(
        distance=d,
        data_qubits=tuple(data_coords),
        ancilla_qubits=tuple(ancillas),
        x_stabilizers=tuple(x_stabs),
        z_stabilizers=tuple(z_stabs),
        logical_x_support=logical_x,
        logical_z_support=logical_z,
        schedule=tuple(tuple(layer) for layer in layers),
    )


def check_commutation(layout: CodeLayout) -> bool:
    """True iff all X/Z stabilizer pairs and logical/stabilizer pairs commute."""
    z_sets = [set(s.support) for s in layout.z_stabilizers]
    x_sets = [set(s.support) for s in layout.x_stabilizers]
    for xs in x_sets:
        for zs in z_sets:
            if len(xs & zs) % 2:
                return False
    lx, lz = set(layout.logical_x_support), set(layout.logical_z_support)
    if any(len(lx & zs) % 2 for zs in z_sets):
        return False
    if any(len(lz & xs) % 2 for xs in x_sets):
        return False
    return True
