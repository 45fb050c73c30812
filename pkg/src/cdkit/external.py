"""Adapter that proxies score_next to a child process over a line protocol.

Protocol (newline-delimited text on stdin/stdout of the adapter):
  adapter -> engine   VOCAB <size> <vocab-id>          (once, on startup)
  engine  -> adapter  SCORE <space-separated token ids>
  adapter -> engine   LOGITS <size space-separated floats>
Floats travel as decimal text; adapters should print 9 significant digits.
"""

from __future__ import annotations

import queue
import shlex
import subprocess
import threading

import numpy as np

from .core import LogitVector
from .errors import ScorerCompatibilityError, ScorerProtocolError, ValidationError
from .scorers import Scorer, ScorerDescriptor, Vocabulary

_EXCERPT = 80


def _excerpt(line: str) -> str:
    return line if len(line) <= _EXCERPT else line[:_EXCERPT] + "..."


class ExternalScorer(Scorer):
    """Scorer backed by an adapter subprocess.

    The adapter announces its vocabulary size and id on startup; each query
    is one SCORE request awaiting one LOGITS response.  Requests are
    serialized under a lock, and a reader thread feeds a queue so timeouts
    and adapter death surface as scorer errors instead of hangs.
    """

    def __init__(
        self,
        command: str | list[str],
        vocab: Vocabulary,
        parameter_count: float = 0.0,
        timeout: float = 10.0,
    ):
        self.vocabulary = vocab
        self.descriptor = ScorerDescriptor("external", parameter_count, vocab.id)
        self.timeout = timeout
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerProtocolError(f"could not start adapter {argv!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._lock = threading.Lock()
        self._handshake()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)  # EOF marker

    def _next_line(self, waiting_for: str) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ScorerProtocolError(
                f"adapter timed out after {self.timeout}s waiting for {waiting_for}"
            ) from None
        if line is None:
            raise ScorerProtocolError(f"adapter exited while engine waited for {waiting_for}")
        return line

    def _handshake(self) -> None:
        line = self._next_line("VOCAB handshake")
        parts = line.split()
        if len(parts) != 3 or parts[0] != "VOCAB":
            raise ScorerProtocolError(f"bad handshake line: {_excerpt(line)!r}")
        try:
            size = int(parts[1])
        except ValueError:
            raise ScorerProtocolError(f"bad handshake size: {_excerpt(line)!r}") from None
        if size != self.vocabulary.size or parts[2] != self.vocabulary.id:
            raise ScorerCompatibilityError(
                f"adapter vocabulary ({size}, {parts[2]!r}) does not match "
                f"expected ({self.vocabulary.size}, {self.vocabulary.id!r})"
            )

    def _score_ids(self, ids) -> LogitVector:
        with self._lock:
            if self._proc.poll() is not None:
                raise ScorerProtocolError("adapter process has exited")
            request = "SCORE " + " ".join(str(int(i)) for i in ids) + "\n"
            try:
                self._proc.stdin.write(request)
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError) as exc:
                raise ScorerProtocolError(f"adapter pipe closed mid-request: {exc}") from exc
            line = self._next_line("LOGITS response")
        parts = line.split()
        if not parts or parts[0] != "LOGITS":
            raise ScorerProtocolError(f"expected LOGITS response, got: {_excerpt(line)!r}")
        if len(parts) - 1 != self.vocabulary.size:
            raise ScorerProtocolError(
                f"expected {self.vocabulary.size} logits, got {len(parts) - 1}: {_excerpt(line)!r}"
            )
        try:
            values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError:
            raise ScorerProtocolError(f"non-numeric logit in response: {_excerpt(line)!r}") from None
        try:
            return LogitVector(values)
        except ValidationError as exc:
            raise ScorerProtocolError(f"adapter sent invalid logits: {exc}") from exc

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        if proc.stdin and not proc.stdin.closed:
            try:
                proc.stdin.close()
            except OSError:
                pass
        if proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
