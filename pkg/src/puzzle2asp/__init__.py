"""Logic-puzzle stories to answer set programs, with an embedded solver.

The package has three layers:

* ``syntax`` / ``ground`` / ``solve`` -- a parser, grounder, and stable-model
  enumerator for a restricted rule language (pooled facts, cardinality choice
  rules, comparison-headed test rules);
* ``gateway`` / ``pipeline`` -- few-shot prompting stages that turn a puzzle
  story into such a program via any OpenAI-compatible completion backend,
  with record/replay support for offline runs;
* ``bench`` / ``cli`` -- dataset evaluation and the command-line surface.
"""
from __future__ import annotations

from .syntax import (
    AspSyntaxError,
    Diagnostic,
    DiagnosticKind,
    Program,
    parse_program,
    render_program,
    validate_safety,
)
from .ground import GAtom, GroundingError, GroundProgram, GroundTimeout, ground_program
from .solve import (
    SolveResult,
    SolveTimeout,
    StableModel,
    check_model,
    enumerate_models,
    render_models,
)
from .gateway import (
    Cassette,
    CompletionRequest,
    GatewayConfig,
    LiveBackend,
    QueueEmpty,
    RateLimited,
    RecordingBackend,
    ReplayBackend,
    ReplayMiss,
    ScriptedBackend,
    TransportError,
    fingerprint,
)
from .pipeline import (
    CategorizedConstants,
    FormatError,
    MappingError,
    MissingInput,
    PipelineOptions,
    PipelineTrace,
    PredicateSignature,
    Stage,
    build_prompt,
    parse_constants,
    parse_predicates,
    run_pipeline,
)
from .bench import (
    CaseOutcome,
    CaseResult,
    GoldSolution,
    OutcomeKind,
    PuzzleCase,
    Report,
    SchemaError,
    compare_solution,
    evaluate_case,
    load_dataset,
    report,
)

__version__ = "0.1.0"

__all__ = [
    "AspSyntaxError",
    "CaseOutcome",
    "CaseResult",
    "Cassette",
    "CategorizedConstants",
    "CompletionRequest",
    "Diagnostic",
    "DiagnosticKind",
    "FormatError",
    "GAtom",
    "GatewayConfig",
    "GoldSolution",
    "GroundProgram",
    "GroundTimeout",
    "GroundingError",
    "LiveBackend",
    "MappingError",
    "MissingInput",
    "OutcomeKind",
    "PipelineOptions",
    "PipelineTrace",
    "PredicateSignature",
    "Program",
    "PuzzleCase",
    "QueueEmpty",
    "RateLimited",
    "RecordingBackend",
    "Report",
    "ReplayBackend",
    "ReplayMiss",
    "SchemaError",
    "ScriptedBackend",
    "SolveResult",
    "SolveTimeout",
    "StableModel",
    "Stage",
    "TransportError",
    "build_prompt",
    "check_model",
    "compare_solution",
    "enumerate_models",
    "evaluate_case",
    "fingerprint",
    "ground_program",
    "load_dataset",
    "parse_constants",
    "parse_predicates",
    "parse_program",
    "render_models",
    "render_program",
    "report",
    "run_pipeline",
    "validate_safety",
]
