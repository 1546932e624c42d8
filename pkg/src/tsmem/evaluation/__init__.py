"""Evaluation harness: cases, synthetic suites, judging and reports."""

from tsmem.evaluation.cases import CATEGORIES, EvalCase, judge_template, load_cases, write_cases
from tsmem.evaluation.harness import EvalReport, render_figure, run_eval
from tsmem.evaluation.synthetic import (
    generate_supersession_suite,
    generate_synthetic_suite,
    generate_temporal_suite,
)

__all__ = [
    "CATEGORIES",
    "EvalCase",
    "EvalReport",
    "generate_supersession_suite",
    "generate_synthetic_suite",
    "generate_temporal_suite",
    "judge_template",
    "load_cases",
    "render_figure",
    "run_eval",
    "write_cases",
]
