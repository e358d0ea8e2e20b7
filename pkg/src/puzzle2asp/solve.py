"""Stable-model enumeration for ground choice/nogood programs.

The search is a deterministic depth-first walk over the ground choices in
program order.  Within a choice, candidates are tried true-then-false in
canonical atom order, which enumerates the size-k subsets lexicographically.
Unit-style propagation keeps it honest:

* a nogood with all but one atom true forces the remaining atom false;
* a choice that already has k true candidates forces the rest false;
* a choice whose undecided candidates are exactly the k still needed
  forces them all true.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from .ground import GAtom, GroundProgram, atom_sort_key


class SolveTimeout(Exception):
    """Enumeration ran past its wall-clock budget."""

    def __init__(self, budget: float):
        super().__init__(f"solve budget of {budget:g}s exceeded")
        self.budget = budget


@dataclass(frozen=True)
class StableModel:
    """One stable model: the program facts plus the chosen atoms."""

    atoms: frozenset[GAtom]

    def render(self) -> str:
        return "".join(a.render() + "\n" for a in sorted(self.atoms, key=atom_sort_key))


@dataclass
class SolveStats:
    decisions: int = 0
    propagations: int = 0
    elapsed_s: float = 0.0


@dataclass
class SolveResult:
    models: list[StableModel]
    exhausted: bool  # True iff the whole search space was explored
    stats: SolveStats = field(default_factory=SolveStats)


def render_models(result: SolveResult) -> str:
    """Text form: one atom per line, models separated by ``----``."""
    parts: list[str] = []
    for i, model in enumerate(result.models):
        if i:
            parts.append("----\n")
        parts.append(model.render())
    parts.append(f"MODELS {len(result.models)} EXHAUSTED {'true' if result.exhausted else 'false'}\n")
    return "".join(parts)


@dataclass
class ModelCheck:
    ok: bool
    violation: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_model(g: GroundProgram, atoms: set[GAtom] | frozenset[GAtom]) -> ModelCheck:
    """Verify a candidate atom set against facts, cardinalities, and nogoods.

    Reports the first violation found, scanning facts, then unknown atoms,
    then choices in program order, then nogoods in canonical order.
    """
    for fact in sorted(g.facts - set(atoms), key=atom_sort_key):
        return ModelCheck(False, f"missing fact {fact.render()}")
    candidate_union: set[GAtom] = set()
    for choice in g.choices:
        candidate_union.update(choice.candidates)
    for stray in sorted(set(atoms) - g.facts - candidate_union, key=atom_sort_key):
        return ModelCheck(False, f"unknown atom {stray.render()}")
    for index, choice in enumerate(g.choices):
        true_count = sum(1 for a in choice.candidates if a in atoms)
        if true_count != choice.k:
            return ModelCheck(
                False,
                f"choice {index} (rule {choice.rule_index}) selects "
                f"{true_count} of its candidates, expected exactly {choice.k}",
            )
    for nogood in g.nogoods:
        if nogood.atoms <= set(atoms):
            inner = ", ".join(a.render() for a in sorted(nogood.atoms, key=atom_sort_key))
            return ModelCheck(False, f"nogood violated: [{inner}]")
    return ModelCheck(True)


# ---------------------------------------------------------------------------
# Search engine
# ---------------------------------------------------------------------------

_UNDEC, _TRUE, _FALSE = 0, 1, 2


class _Engine:
    def __init__(self, g: GroundProgram, deadline: float | None, budget: float):
        self.deadline = deadline
        self.budget = budget
        self.stats = SolveStats()

        atom_set: set[GAtom] = set()
        for choice in g.choices:
            atom_set.update(choice.candidates)
        self.atoms: list[GAtom] = sorted(atom_set, key=atom_sort_key)
        self.index: dict[GAtom, int] = {a: i for i, a in enumerate(self.atoms)}
        n = len(self.atoms)

        self.assignment = [_UNDEC] * n
        self.trail: list[int] = []

        # choices: per-choice candidate ids, k, live true/false counters
        self.choice_members: list[list[int]] = []
        self.choice_k: list[int] = []
        self.choice_true: list[int] = []
        self.choice_false: list[int] = []
        self.atom_choices: list[list[int]] = [[] for _ in range(n)]
        for ci, choice in enumerate(g.choices):
            ids = [self.index[a] for a in choice.candidates]
            self.choice_members.append(ids)
            self.choice_k.append(choice.k)
            self.choice_true.append(0)
            self.choice_false.append(0)
            for aid in ids:
                self.atom_choices[aid].append(ci)

        self.unsat = False
        self.nogood_members: list[list[int]] = []
        self.nogood_true: list[int] = []
        self.nogood_false: list[int] = []
        self.atom_nogoods: list[list[int]] = [[] for _ in range(n)]
        for nogood in g.nogoods:
            if not nogood.atoms:
                self.unsat = True
                continue
            ids = sorted(self.index[a] for a in nogood.atoms)
            gi = len(self.nogood_members)
            self.nogood_members.append(ids)
            self.nogood_true.append(0)
            self.nogood_false.append(0)
            for aid in ids:
                self.atom_nogoods[aid].append(gi)

        self.facts = g.facts

    # -- assignment bookkeeping

    def _set(self, aid: int, value: int, queue: deque) -> bool:
        """Commit one assignment; return False on conflict."""
        current = self.assignment[aid]
        if current != _UNDEC:
            return current == value
        self.assignment[aid] = value
        self.trail.append(aid)
        if value == _TRUE:
            for gi in self.atom_nogoods[aid]:
                self.nogood_true[gi] += 1
            for ci in self.atom_choices[aid]:
                self.choice_true[ci] += 1
                if self.choice_true[ci] > self.choice_k[ci]:
                    return False
        else:
            for gi in self.atom_nogoods[aid]:
                self.nogood_false[gi] += 1
            for ci in self.atom_choices[aid]:
                self.choice_false[ci] += 1
        # schedule consequences
        for gi in self.atom_nogoods[aid]:
            size = len(self.nogood_members[gi])
            if self.nogood_false[gi] == 0:
                if self.nogood_true[gi] == size:
                    return False
                if self.nogood_true[gi] == size - 1:
                    queue.append(("nogood", gi))
        for ci in self.atom_choices[aid]:
            size = len(self.choice_members[ci])
            undecided = size - self.choice_true[ci] - self.choice_false[ci]
            if self.choice_true[ci] + undecided < self.choice_k[ci]:
                return False
            if self.choice_true[ci] == self.choice_k[ci] and undecided:
                queue.append(("cap", ci))
            elif self.choice_true[ci] + undecided == self.choice_k[ci] and undecided:
                queue.append(("fill", ci))
        return True

    def _undo_to(self, mark: int) -> None:
        while len(self.trail) > mark:
            aid = self.trail.pop()
            value = self.assignment[aid]
            self.assignment[aid] = _UNDEC
            if value == _TRUE:
                for gi in self.atom_nogoods[aid]:
                    self.nogood_true[gi] -= 1
                for ci in self.atom_choices[aid]:
                    self.choice_true[ci] -= 1
            else:
                for gi in self.atom_nogoods[aid]:
                    self.nogood_false[gi] -= 1
                for ci in self.atom_choices[aid]:
                    self.choice_false[ci] -= 1

    def _propagate(self, queue: deque) -> bool:
        while queue:
            kind, idx = queue.popleft()
            if kind == "nogood":
                gi = idx
                if self.nogood_false[gi] > 0:
                    continue
                size = len(self.nogood_members[gi])
                if self.nogood_true[gi] == size:
                    return False
                if self.nogood_true[gi] == size - 1:
                    for aid in self.nogood_members[gi]:
                        if self.assignment[aid] == _UNDEC:
                            self.stats.propagations += 1
                            if not self._set(aid, _FALSE, queue):
                                return False
                            break
            else:
                ci = idx
                size = len(self.choice_members[ci])
                undecided = size - self.choice_true[ci] - self.choice_false[ci]
                if self.choice_true[ci] > self.choice_k[ci]:
                    return False
                if self.choice_true[ci] + undecided < self.choice_k[ci]:
                    return False
                if kind == "cap" and self.choice_true[ci] == self.choice_k[ci]:
                    for aid in self.choice_members[ci]:
                        if self.assignment[aid] == _UNDEC:
                            self.stats.propagations += 1
                            if not self._set(aid, _FALSE, queue):
                                return False
                elif kind == "fill" and self.choice_true[ci] + undecided == self.choice_k[ci]:
                    for aid in self.choice_members[ci]:
                        if self.assignment[aid] == _UNDEC:
                            self.stats.propagations += 1
                            if not self._set(aid, _TRUE, queue):
                                return False
        return True

    def _assign(self, aid: int, value: int) -> bool:
        queue: deque = deque()
        if not self._set(aid, value, queue):
            return False
        return self._propagate(queue)

    def _initial_propagate(self) -> bool:
        queue: deque = deque()
        for ci in range(len(self.choice_members)):
            size = len(self.choice_members[ci])
            if self.choice_k[ci] > size:
                return False
            if self.choice_k[ci] == size:
                queue.append(("fill", ci))
            if self.choice_k[ci] == 0:
                queue.append(("cap", ci))
        for gi, members in enumerate(self.nogood_members):
            if len(members) == 1:
                queue.append(("nogood", gi))
                # singleton nogood forbids its atom outright
                aid = members[0]
                if self.assignment[aid] == _UNDEC:
                    self.stats.propagations += 1
                    if not self._set(aid, _FALSE, queue):
                        return False
        return self._propagate(queue)

    # -- branching

    def _branch_atom(self) -> int | None:
        for ci, members in enumerate(self.choice_members):
            if self.choice_true[ci] < self.choice_k[ci]:
                for aid in members:
                    if self.assignment[aid] == _UNDEC:
                        return aid
        return None

    def run(self, limit: int | None) -> SolveResult:
        start = time.monotonic()
        deadline = self.deadline
        if deadline is None and self.budget is not None:
            deadline = start + self.budget
        models: list[StableModel] = []

        def out(exhausted: bool) -> SolveResult:
            self.stats.elapsed_s = time.monotonic() - start
            return SolveResult(models, exhausted, self.stats)

        if self.unsat or not self._initial_propagate():
            return out(True)

        # frames: (atom id, trail mark, tried_false)
        frames: list[list[int]] = []
        while True:
            if deadline is not None and time.monotonic() > deadline:
                raise SolveTimeout(self.budget)
            aid = self._branch_atom()
            if aid is None:
                models.append(
                    StableModel(
                        frozenset(self.facts)
                        | frozenset(
                            a for i, a in enumerate(self.atoms) if self.assignment[i] == _TRUE
                        )
                    )
                )
                if limit is not None and len(models) >= limit:
                    return out(not frames)
                conflict = True  # force a backtrack to look for the next model
            else:
                self.stats.decisions += 1
                frames.append([aid, len(self.trail), 0])
                conflict = not self._assign(aid, _TRUE)
            while conflict:
                if not frames:
                    return out(True)
                frame = frames[-1]
                self._undo_to(frame[1])
                if frame[2] == 0:
                    frame[2] = 1
                    conflict = not self._assign(frame[0], _FALSE)
                    if conflict:
                        frames.pop()
                else:
                    frames.pop()


def enumerate_models(
    g: GroundProgram,
    limit: int | None = 2,
    budget: float = 10.0,
    deadline: float | None = None,
) -> SolveResult:
    """Enumerate stable models up to `limit` (None for all).

    `budget` is a wall-clock allowance in seconds; callers sharing a clock
    across grounding and solving may pass an absolute `deadline`
    (time.monotonic() instant) instead.  Raises SolveTimeout when the time
    runs out.  Models come back in deterministic search order and
    ``exhausted`` says whether the whole space was explored.
    """
    if limit is not None and limit < 1:
        raise ValueError("limit must be a positive integer or None")
    return _Engine(g, deadline, budget).run(limit)
