"""Config-driven orchestration of LLM reviewer agents over tabular data."""

from __future__ import annotations

__version__ = "0.1.0"

from .agents import AgentSpec, build_prompt, output_schema_for, review_item, review_items
from .config import WorkflowConfig, dump_config, load_config, parse_config
from .consensus import (
    BALANCED,
    SENSITIVE,
    SPECIFIC,
    STRATEGIES,
    ConsensusConfig,
    ThresholdStrategy,
    apply_consensus,
    classify,
    final_score,
    needs_senior,
)
from .datasets import Dataset, read_dataset, write_dataset
from .engine import RunReport, arun_workflow, run_workflow, validate_schema
from .errors import ReviewFlowError
from .evaluation import MetricsReport, evaluate, roc_auc, roc_points, trapezoid_area
from .filters import eval_filter, parse_filter, to_source
from .model import ReviewTable, RoundSpec, WorkflowSchema, append_columns, make_column_name
from .providers import MockScript, OutputSchema, Provider, ProviderConfig, make_provider

__all__ = [
    "AgentSpec", "BALANCED", "ConsensusConfig", "Dataset", "MetricsReport", "MockScript",
    "OutputSchema", "Provider", "ProviderConfig", "ReviewFlowError", "ReviewTable", "RoundSpec",
    "RunReport", "SENSITIVE", "SPECIFIC", "STRATEGIES", "ThresholdStrategy", "WorkflowConfig",
    "WorkflowSchema", "append_columns", "apply_consensus", "arun_workflow", "build_prompt",
    "classify", "dump_config", "eval_filter", "evaluate", "final_score", "load_config",
    "make_column_name", "make_provider", "needs_senior", "output_schema_for", "parse_config",
    "parse_filter", "read_dataset", "review_item", "review_items", "roc_auc", "roc_points",
    "run_workflow", "to_source", "trapezoid_area", "validate_schema", "write_dataset",
]
