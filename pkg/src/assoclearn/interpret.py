"""Read independence structure off a fitted sparsity pattern.

Effects of order >= 2 induce an interaction graph on the responses; its
connected components give joint-independence blocks, and deleting a
candidate conditioning set of responses gives conditional statements.
All statements are implications of the fitted support, not verified
properties of the data-generating law, and the rendering says so.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, CoefficientBlocks
from .layout import Effect, format_effect, inv_vec_J
from .likelihood import predict_probs
from .penalty import GroupStructure, block_sqnorms


@dataclass(frozen=True)
class SupportPattern:
    """Which effects are active, overall and per predictor block."""

    q: int
    effects_present: frozenset[Effect]
    per_block: tuple[frozenset[Effect], ...] = ()

    @classmethod
    def from_blocks(cls, beta: CoefficientBlocks, gs: GroupStructure | None = None,
                    tol: float = 0.0) -> "SupportPattern":
        """Detect support from coefficient blocks.

        The proximal solver produces exact zeros, so the default tolerance
        is zero; pass ``tol`` > 0 for coefficients that came from a dense
        source.
        """
        layout = beta.layout
        if gs is not None:
            sq = block_sqnorms(beta.values, gs)
            per_block = tuple(
                frozenset(layout.effects[i] for i in range(layout.n_effects)
                          if np.sqrt(sq[i, j]) > tol)
                for j in range(gs.t))
            effects = frozenset(k for blk in per_block for k in blk)
        else:
            norms = [np.linalg.norm(beta.values[layout.rows_of(k), :]) for k in layout.effects]
            effects = frozenset(k for k, v in zip(layout.effects, norms) if v > tol)
            per_block = ()
        return cls(q=layout.q, effects_present=effects, per_block=per_block)


def check_hierarchy(effects, q: int | None = None) -> tuple[bool, list[tuple[Effect, Effect]]]:
    """Is the effect set downward closed under taking subsets?

    The overall effect counts as always present (it is the image of the
    empty set).  Returns the flag and the list of (effect, missing subset)
    violations.
    """
    present = {tuple(sorted(k)) for k in effects}
    violations = []
    for k in sorted(present, key=lambda k: (len(k), k)):
        for s in range(1, len(k)):
            for sub in itertools.combinations(k, s):
                if sub not in present:
                    violations.append((k, sub))
    return not violations, violations


def _components(q: int, edges) -> list[tuple[int, ...]]:
    parent = list(range(q))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for v in range(q):
        groups.setdefault(find(v), []).append(v)
    return sorted(tuple(sorted(vs)) for vs in groups.values())


def interaction_edges(effects, restrict=None):
    """Edges between responses that co-occur in an effect of order >= 2."""
    keep = None if restrict is None else set(restrict)
    edges = set()
    for k in effects:
        members = [v for v in k if keep is None or v in keep]
        edges.update(itertools.combinations(sorted(members), 2))
    return sorted(edges)


def joint_independence_partition(effects, q: int) -> list[tuple[int, ...]]:
    """Finest partition whose blocks contain every present interaction."""
    return _components(q, interaction_edges(effects))


@dataclass(frozen=True)
class ConditionalStatement:
    blocks: tuple[tuple[int, ...], ...]  # the separated response groups
    given: tuple[int, ...]               # the conditioning responses


def conditional_independence_statements(effects, q: int) -> list[ConditionalStatement]:
    """All vertex-deletion separations of the interaction graph.

    Enumerates nonempty conditioning sets (exhaustive, so q is capped at 8)
    and keeps those whose removal splits the remaining responses into at
    least two components.  Smaller conditioning sets come first.
    """
    if q > 8:
        raise ValueError("conditional enumeration is exponential; q must be <= 8")
    out = []
    for size in range(1, q - 1):
        for given in itertools.combinations(range(q), size):
            rest = [v for v in range(q) if v not in given]
            edges = interaction_edges(effects, restrict=rest)
            # components within the remaining vertex set
            remap = {v: i for i, v in enumerate(rest)}
            comp = _components(len(rest), [(remap[a], remap[b]) for a, b in edges])
            if len(comp) >= 2:
                blocks = tuple(tuple(rest[i] for i in c) for c in comp)
                out.append(ConditionalStatement(blocks=blocks, given=given))
    return out


@dataclass
class IndependenceReport:
    q: int
    effects_present: tuple[Effect, ...]
    partition: list[tuple[int, ...]]
    conditionals: list[ConditionalStatement]
    hierarchy_ok: bool
    violations: list[tuple[Effect, Effect]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["Structure implied by the fitted support (not a verified property of the data):"]
        blocks = self.partition
        if len(blocks) == self.q:
            names = ", ".join(_zname(v) for v in range(self.q))
            lines.append(f"  {names} are mutually independent given X.")
        elif len(blocks) >= 2:
            lines.append("  Jointly independent groups given X: "
                         + " | ".join(_zset(b) for b in blocks))
        else:
            lines.append("  No joint independence implied.")
        for st in self.conditionals:
            parts = " ⊥ ".join(_zset(b) for b in st.blocks)
            lines.append(f"  {parts} | {', '.join(_zname(v) for v in st.given)}, X")
        if not self.conditionals and len(blocks) == 1:
            lines.append("  No independence implied.")
        if not self.hierarchy_ok:
            lines.append("  WARNING: support violates the effect hierarchy:")
            for k, missing in self.violations:
                lines.append(f"    {format_effect(k)} present but {format_effect(missing)} absent")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "q": self.q,
            "effects_present": [[v + 1 for v in k] for k in self.effects_present],
            "partition": [[v + 1 for v in b] for b in self.partition],
            "conditional": [
                {"blocks": [[v + 1 for v in b] for b in st.blocks],
                 "given": [v + 1 for v in st.given]}
                for st in self.conditionals
            ],
            "hierarchy_ok": self.hierarchy_ok,
            "violations": [
                {"effect": [v + 1 for v in k], "missing": [v + 1 for v in m]}
                for k, m in self.violations
            ],
        }


def _zname(v: int) -> str:
    return f"Z{v + 1}"


def _zset(block) -> str:
    if len(block) == 1:
        return _zname(block[0])
    return "{" + ",".join(_zname(v) for v in block) + "}"


def build_report(support: SupportPattern) -> IndependenceReport:
    effects = sorted(support.effects_present, key=lambda k: (len(k), k))
    ok, violations = check_hierarchy(effects)
    return IndependenceReport(
        q=support.q,
        effects_present=tuple(effects),
        partition=joint_independence_partition(effects, support.q),
        conditionals=conditional_independence_statements(effects, support.q),
        hierarchy_ok=ok,
        violations=violations,
    )


def verify_factorization(beta: CoefficientBlocks, basis: BasisSet, x: np.ndarray,
                         partition) -> float:
    """Largest deviation of the joint pmf at x from its blockwise product."""
    layout = basis.layout
    _check_partition(partition, layout.q)
    arr = inv_vec_J(predict_probs(beta, basis, np.asarray(x, dtype=float)), layout)
    prod = np.ones(layout.J)
    for block in partition:
        prod = prod * _marginal(arr, block, layout)
    return float(np.max(np.abs(arr - prod)))


def verify_conditional_factorization(beta: CoefficientBlocks, basis: BasisSet, x: np.ndarray,
                                     blocks, given) -> float:
    """Largest deviation from the conditional product given the last group."""
    layout = basis.layout
    _check_partition(list(blocks) + [given], layout.q)
    arr = inv_vec_J(predict_probs(beta, basis, np.asarray(x, dtype=float)), layout)
    m_given = _marginal(arr, given, layout)
    lhs = arr / m_given
    rhs = np.ones(layout.J)
    for block in blocks:
        rhs = rhs * _marginal(arr, tuple(block) + tuple(given), layout) / m_given
    return float(np.max(np.abs(lhs - rhs)))


def _marginal(arr: np.ndarray, block, layout) -> np.ndarray:
    axes = tuple(sorted(block))
    other = tuple(a for a in range(layout.q) if a not in axes)
    marg = arr.sum(axis=other) if other else arr
    shape = [1] * layout.q
    for a in axes:
        shape[a] = layout.J[a]
    return marg.reshape(shape)


def _check_partition(partition, q: int):
    seen = [v for block in partition for v in block]
    if sorted(seen) != list(range(q)):
        raise ValueError(f"blocks {partition} do not partition the {q} responses")
