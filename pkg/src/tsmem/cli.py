"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from tsmem import persistence
from tsmem.config import ConfigError, EngineConfig
from tsmem.model import ChatTurn, MemoryKind, TimePoint
from tsmem.providers.base import ProviderError
from tsmem.retrieval import ABLATIONS

logger = logging.getLogger(__name__)

EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 1, 2, 3


class DataError(click.ClickException):
    exit_code = EXIT_DATA


class ProviderFailure(click.ClickException):
    exit_code = EXIT_PROVIDER


def read_transcript(path: Path) -> list[ChatTurn]:
    """ChatTurn records, one JSON object per line; blank lines are skipped."""
    turns = []
    try:
        lines = path.read_text("utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            turns.append(ChatTurn.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return turns


class Context:
    def __init__(self, config_path: Optional[str], store: Optional[str]):
        try:
            self.config = EngineConfig.load(config_path)
        except ConfigError as exc:
            raise DataError(str(exc)) from exc
        self.store = Path(store or self.config.store_path)

    def open(self, create: bool = False):
        try:
            return persistence.load(self.store, **_load_kwargs(self.config))
        except FileNotFoundError:
            if not create:
                raise DataError(f"no memory store at {self.store}; run `tsmem ingest` first")
            return self.config.build_memory()
        except (persistence.CorruptSnapshot, persistence.MigrationRequired) as exc:
            raise DataError(str(exc)) from exc

    def save(self, memory) -> dict:
        try:
            return persistence.save(memory, self.store)
        except persistence.SaveError as exc:
            raise DataError(str(exc)) from exc


def _load_kwargs(config: EngineConfig) -> dict:
    # graph and consolidation settings come from the snapshot; providers and query settings from the config
    kwargs = config.memory_kwargs()
    return {k: kwargs[k] for k in ("completion", "embedder", "retrieval")}


def _emit(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False))


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), envvar="TSMEM_CONFIG",
              help="YAML engine config.")
@click.option("--store", type=click.Path(file_okay=False), help="Snapshot directory (overrides the config).")
@click.option("-v", "--verbose", count=True, help="More logging; repeat for debug.")
@click.pass_context
def cli(ctx, config_path, store, verbose):
    """Temporal-semantic memory for conversational agents."""
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = (config_path, store)


def _ctx(click_ctx) -> Context:
    return Context(*click_ctx.obj)


@cli.command()
@click.argument("transcript", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
@click.pass_context
def ingest(click_ctx, transcript, as_json):
    """Ingest a JSONL transcript of chat turns into the store."""
    ctx = _ctx(click_ctx)
    turns = read_transcript(transcript)
    memory = ctx.open(create=True)
    try:
        report = memory.ingest(turns)
    except ProviderError as exc:
        raise ProviderFailure(str(exc)) from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ctx.save(memory)
    if as_json:
        _emit(report.to_json())
        return
    data = report.to_json()
    click.echo(f"turns: {data['turns_seen']} ({data['turns_new']} new)")
    click.echo(f"entities: {data['entities']}  facts: {data['facts']}")
    click.echo("actions: " + "  ".join(f"{k}={v}" for k, v in data["actions"].items()))
    if data["consolidated"]:
        click.echo(f"sleep-time consolidation installed {data['consolidated']} durative memories")
    if data["extraction_errors"]:
        click.echo(f"extraction failed for {len(data['extraction_errors'])} turns", err=True)


@cli.command()
@click.argument("question")
@click.option("--now", required=True, help="Time the question is asked (ISO-8601).")
@click.option("--ablate", type=click.Choice(ABLATIONS), default="none", show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit the full retrieval result as JSON.")
@click.option("--show", default=5, show_default=True, help="Evidence items to print.")
@click.pass_context
def query(click_ctx, question, now, ablate, as_json, show):
    """Answer QUESTION from the store as of --now."""
    ctx = _ctx(click_ctx)
    try:
        issued = TimePoint.parse(now)
    except ValueError as exc:
        raise click.UsageError(f"--now: {exc}") from exc
    memory = ctx.open()
    result = memory.query(question, issued, memory.retrieval.with_ablation(ablate))
    if as_json:
        _emit(result.to_json())
    else:
        click.echo(f"time constraint: {result.time_constraint.label()}")
        for c in result.ranked[:show]:
            flags = ",".join(f for f, on in (("valid", c.time_valid), ("promoted", c.tkg_promoted)) if on) or "-"
            kind = "turn" if c.kind is MemoryKind.RAW else c.kind.value
            click.echo(f"  [{kind} | {c.span.label()}] sim={c.similarity:.3f} {flags} {c.text[:80]}")
        click.echo(f"answer: {result.answer if result.answer is not None else '(none)'}")
    if result.error:
        raise ProviderFailure(result.error)


@cli.command()
@click.option("--force/--if-due", default=True, show_default=True,
              help="Rebuild dirty slices now, or only when the sleep-time trigger fires.")
@click.pass_context
def consolidate(click_ctx, force):
    """Run sleep-time consolidation and save the store."""
    ctx = _ctx(click_ctx)
    memory = ctx.open()
    installed = memory.consolidate(force=force)
    ctx.save(memory)
    click.echo(f"installed {len(installed)} durative memories; store now has {memory.stats()}")


@cli.command()
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Also write a copy here.")
@click.pass_context
def snapshot(click_ctx, out):
    """Print the store manifest, optionally saving a copy elsewhere."""
    ctx = _ctx(click_ctx)
    memory = ctx.open()
    manifest = persistence.save(memory, out) if out else persistence.read_manifest(ctx.store)
    _emit(manifest)


@cli.command("eval")
@click.option("--cases", "cases_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Case file (JSON list or JSONL). Default: a generated synthetic suite.")
@click.option("--synthetic", type=int, default=100, show_default=True, help="Suite size when --cases is absent.")
@click.option("--suite", type=click.Choice(["mixed", "temporal", "supersession"]), default="mixed", show_default=True)
@click.option("--ablate", type=click.Choice(ABLATIONS), default="none", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--figure", "figure_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Write a per-category accuracy bar chart (PNG).")
@click.pass_context
def eval_cmd(click_ctx, cases_path, synthetic, suite, ablate, seed, report_path, figure_path):
    """Replay cases through fresh stores and report judged accuracy."""
    from tsmem.evaluation import (generate_supersession_suite, generate_synthetic_suite, generate_temporal_suite,
                                  load_cases, render_figure, run_eval)

    ctx = _ctx(click_ctx)
    if cases_path:
        try:
            cases = load_cases(cases_path)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from exc
    else:
        gen = {"mixed": generate_synthetic_suite, "temporal": generate_temporal_suite,
               "supersession": generate_supersession_suite}[suite]
        cases = gen(seed, synthetic) if synthetic > 0 else []
    report = run_eval(cases, ctx.config, ablate, seed)
    text = report.dumps()
    if report_path:
        report_path.write_text(text, encoding="utf-8")
    if figure_path:
        render_figure(report, figure_path)
    summary = report.to_json()
    click.echo("-----BEGIN EVAL REPORT-----")
    click.echo(f"ablation: {ablate}  cases: {summary['cases']}  errored: {summary['errored']}")
    for cat, row in summary["per_category"].items():
        click.echo(f"  {cat:<26} {row['correct']:>4}/{row['n']:<4} {row['accuracy']:.3f}")
    overall = summary["overall_accuracy"]
    click.echo(f"overall: {'n/a' if overall is None else f'{overall:.3f}'}")
    tr = summary["target_retrieval"]
    if tr["cases"]:
        click.echo(f"top-1 target retrieval: {tr['top1_hits']}/{tr['cases']}")
    if figure_path:
        click.echo(f"figure: {figure_path}")
    click.echo("-----END EVAL REPORT-----")
    if summary["errored"] and summary["errored"] == summary["cases"]:
        raise ProviderFailure("every case errored")


@cli.command()
@click.argument("fmt", type=click.Choice(["longmemeval", "locomo"]))
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("dest", type=click.Path(dir_okay=False, path_type=Path))
def convert(fmt, source, dest):
    """Convert benchmark JSON into the eval case format (JSONL)."""
    from tsmem.evaluation.cases import write_cases
    from tsmem.evaluation.convert import from_locomo, from_longmemeval

    try:
        data = json.loads(source.read_text("utf-8"))
        cases = (from_longmemeval if fmt == "longmemeval" else from_locomo)(data)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{source}: {exc}") from exc
    write_cases(cases, dest)
    click.echo(f"wrote {len(cases)} cases to {dest}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.pass_context
def serve(click_ctx, host, port):
    """Serve the HTTP JSON API over the store."""
    import uvicorn

    from tsmem.service import create_app

    ctx = _ctx(click_ctx)
    memory = ctx.open(create=True)
    uvicorn.run(create_app(memory, ctx.store), host=host, port=port)


def main(argv=None) -> None:
    try:
        rv = cli.main(args=argv, prog_name="tsmem", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(EXIT_USAGE)
    except ProviderError as exc:
        click.echo(f"Error: provider failure: {exc}", err=True)
        sys.exit(EXIT_PROVIDER)
    sys.exit(rv if isinstance(rv, int) else 0)


if __name__ == "__main__":
    main()
