from typing import Any, FrozenSet, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Topology(BaseModel):
    """Directed network. An edge (l, k) means agent k receives from agent l."""

    n_agents: int = Field(..., gt=0, description="Number of agents")
    edges: FrozenSet[Tuple[int, int]] = Field(default_factory=frozenset, description="Ordered (from, to) pairs, 1-based")
    self_loops: bool = Field(True, description="Give every agent an edge to itself")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="before")
    @classmethod
    def add_self_loops(cls, values: Any):
        if not isinstance(values, dict):
            return values
        values = dict(values)
        # JSON carries edges as [[from, to], ...]
        edges = {tuple(int(x) for x in pair) for pair in values.get("edges") or ()}
        try:
            n = int(values.get("n_agents"))
        except (TypeError, ValueError):
            n = None
        loops = values.get("self_loops", True)
        if isinstance(loops, str):
            loops = loops.strip().lower() in ("1", "true", "yes", "on")
        if loops and n is not None:
            edges |= {(k, k) for k in range(1, n + 1)}
        values["edges"] = frozenset(edges)
        return values

    @model_validator(mode="after")
    def check_indices(self):
        for l, k in self.edges:
            if not (1 <= l <= self.n_agents and 1 <= k <= self.n_agents):
                raise ValueError(f"Edge ({l}, {k}) references an agent outside [1, {self.n_agents}]")
        return self

    def neighborhood(self, k: int) -> List[int]:
        """Agents whose beliefs agent k receives (k included when it has a self-loop)."""
        return sorted(l for l, kk in self.edges if kk == k)

    def edge_list(self) -> List[List[int]]:
        return [list(e) for e in sorted(self.edges)]
