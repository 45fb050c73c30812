/**
 * Subprocess plumbing for the cdkit engine.
 *
 * Every binding call shells out to `python3 -m cdkit.cli <subcommand>`,
 * speaks JSON over stdin/stdout, and surfaces engine failures as
 * EngineError with the process exit code and stderr text attached.
 * Nothing numeric happens on this side of the boundary.
 */

import { spawn, spawnSync } from "node:child_process";

/** Engine exit codes: 1 usage/config/validation, 2 data/protocol, 3 internal. */
export class EngineError extends Error {
  readonly exitCode: number | null;
  readonly stderr: string;

  constructor(message: string, exitCode: number | null, stderr: string) {
    super(message);
    this.name = "EngineError";
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

/** Override with CDKIT_PYTHON when the engine lives in a non-default interpreter. */
export function pythonBin(): string {
  return process.env.CDKIT_PYTHON ?? "python3";
}

const MAX_BUFFER = 64 * 1024 * 1024;

function failure(args: string[], status: number | null, stderr: string): EngineError {
  const detail = stderr.trim() || "(no stderr)";
  return new EngineError(
    `cdkit ${args[0] ?? "?"} exited with ${status ?? "no status"}: ${detail}`,
    status,
    stderr,
  );
}

/** Run one engine subcommand synchronously; returns raw stdout. */
export function runEngine(args: string[], stdin?: string): string {
  const proc = spawnSync(pythonBin(), ["-m", "cdkit.cli", ...args], {
    input: stdin,
    encoding: "utf8",
    maxBuffer: MAX_BUFFER,
  });
  if (proc.error) {
    throw new EngineError(`failed to start the engine: ${proc.error.message}`, null, "");
  }
  if (proc.status !== 0) {
    throw failure(args, proc.status, proc.stderr ?? "");
  }
  return proc.stdout;
}

/** Async flavor of runEngine, for callers that fan out many requests. */
export function runEngineAsync(args: string[], stdin?: string): Promise<string> {
  return new Promise((resolve, reject) => {
    const proc = spawn(pythonBin(), ["-m", "cdkit.cli", ...args], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    let stdout = "";
    let stderr = "";
    proc.stdout.setEncoding("utf8");
    proc.stderr.setEncoding("utf8");
    proc.stdout.on("data", (chunk: string) => (stdout += chunk));
    proc.stderr.on("data", (chunk: string) => (stderr += chunk));
    proc.on("error", (err) =>
      reject(new EngineError(`failed to start the engine: ${err.message}`, null, "")),
    );
    proc.on("close", (status) => {
      if (status !== 0) {
        reject(failure(args, status, stderr));
      } else {
        resolve(stdout);
      }
    });
    if (stdin !== undefined) {
      proc.stdin.write(stdin);
    }
    proc.stdin.end();
  });
}

export function parseReply<T>(raw: string, context: string): T {
  try {
    return JSON.parse(raw) as T;
  } catch (err) {
    throw new EngineError(`engine returned non-JSON output for ${context}: ${raw.slice(0, 80)}`, 0, "");
  }
}

/** Version string reported by the installed engine. */
export function engineVersion(): string {
  return runEngine(["--version"]).trim();
}
