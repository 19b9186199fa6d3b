"""External-executable wrapper: file in, file out, one child process at a time."""

from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..databatch import BATCH_COUNT, DataBatch, FileRef, batch_to_file, file_to_batch, sidecar_path
from .base import FILE, ProcessorConfigError, ProcessorLogic, register


class ExecFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecSpec:
    command: str
    args: tuple[str, ...] = ("{input_file}", "{output_file}")
    workdir: str | None = None
    timeout_ms: int = 30_000
    expected_exit: int = 0
    output_tuples: bool = False
    env: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: dict) -> "ExecSpec":
        if "command" not in cfg:
            raise ProcessorConfigError("exec needs 'command'")
        return cls(
            command=str(cfg["command"]),
            args=tuple(str(a) for a in cfg.get("args", ("{input_file}", "{output_file}"))),
            workdir=cfg.get("workdir"),
            timeout_ms=int(cfg.get("timeout_ms", 30_000)),
            expected_exit=int(cfg.get("expected_exit", 0)),
            output_tuples=bool(cfg.get("output_tuples", False)),
            env=dict(cfg.get("env", {})),
        )

    def resolved_command(self) -> str:
        return sys.executable if self.command == "{python}" else self.command

    def check(self) -> None:
        cmd = self.resolved_command()
        found = shutil.which(cmd) if os.sep not in cmd else (cmd if os.access(cmd, os.X_OK) else None)
        if not found:
            raise ProcessorConfigError(f"exec command {cmd!r} not found or not executable")

    def argv(self, input_file: Path, output_file: Path) -> list[str]:
        subst = {"input_file": str(input_file), "output_file": str(output_file), "python": sys.executable}
        return [self.resolved_command()] + [a.format(**subst) for a in self.args]


def run_child(spec: ExecSpec, input_file: Path, output_file: Path) -> None:
    argv = spec.argv(input_file, output_file)
    env = dict(os.environ, **{k: str(v) for k, v in spec.env.items()})
    try:
        proc = subprocess.run(
            argv,
            cwd=spec.workdir or None,
            env=env,
            capture_output=True,
            timeout=spec.timeout_ms / 1000.0,
        )
    except subprocess.TimeoutExpired as exc:
        # subprocess.run kills the child before re-raising
        raise ExecFailed(f"{argv[0]} timed out after {spec.timeout_ms} ms") from exc
    except OSError as exc:
        raise ExecFailed(f"cannot run {argv[0]}: {exc}") from exc
    if proc.returncode != spec.expected_exit:
        err = proc.stderr.decode(errors="replace").strip()[-300:]
        raise ExecFailed(f"{argv[0]} exited {proc.returncode} (expected {spec.expected_exit}): {err}")
    if not output_file.exists():
        raise ExecFailed(f"{argv[0]} did not write {output_file}")


def _merged_output(spec: ExecSpec, in_attrs: dict, out_path: Path) -> DataBatch:
    had_sidecar = sidecar_path(out_path).exists()
    produced = file_to_batch(out_path)
    attrs = dict(in_attrs)
    attrs.update(produced.attributes)
    if spec.output_tuples and not had_sidecar:
        attrs[BATCH_COUNT] = str(sum(1 for ln in produced.content.splitlines() if ln.strip()))
    return DataBatch(attrs, produced.content)


def exec_process(spec: ExecSpec, batch: DataBatch, workdir: str | os.PathLike | None = None) -> DataBatch:
    """Write the batch to a file, run the command, read its output file back."""
    tmp = Path(tempfile.mkdtemp(prefix="echo-exec-", dir=workdir))
    try:
        ref = batch_to_file(batch, tmp, "input.bin")
        out_path = tmp / "output.bin"
        run_child(spec, ref.path, out_path)
        return _merged_output(spec, dict(batch.attributes), out_path)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


@register("exec")
class ExecProcessor(ProcessorLogic):
    input_models = (FILE,)
    output_models = (FILE,)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.exec_spec = ExecSpec.from_config(self.config)
        self.runs = 0

    def open(self) -> None:
        self.exec_spec.check()

    def on_item(self, ref: FileRef, emit) -> None:
        side = sidecar_path(ref.path)
        in_attrs = json.loads(side.read_text()) if side.exists() else {}
        tmp = Path(tempfile.mkdtemp(prefix="echo-exec-", dir=self.ctx.workdir))
        try:
            out_path = tmp / "output.bin"
            run_child(self.exec_spec, ref.path, out_path)
            self.runs += 1
            merged = _merged_output(self.exec_spec, in_attrs, out_path)
            emit(batch_to_file(merged, tmp, "result.bin"))
        finally:
            shutil.rmtree(tmp, ignore_errors=True)

    def metrics(self) -> dict:
        return {"runs": self.runs}
