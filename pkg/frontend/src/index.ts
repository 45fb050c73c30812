/**
 * Array-in/array-out bindings for the cdkit contrastive-decoding engine.
 *
 * Every function is a call-through to the engine CLI over its JSON
 * boundary; no math is reimplemented here. Input arrays are copied at
 * the boundary and results come back as fresh Float64Arrays, with
 * masked-out tokens surfaced as -Infinity.
 */

import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { EngineError, engineVersion, parseReply, runEngine, runEngineAsync } from "./engine";
import { BoundConfig, Formulation, ResolvedBoundConfig, resolveConfig } from "./config";

export { EngineError, engineVersion } from "./engine";
export { BoundConfig, Formulation, ResolvedBoundConfig, resolveConfig } from "./config";

/** Matches the engine's version; asserted by the test suite. */
export const VERSION = "0.1.0";

export type NumericArray = ReadonlyArray<number> | Float64Array;

/** Copy + validate one logit array at the boundary. */
function toPlainArray(name: string, values: NumericArray): number[] {
  if (!Array.isArray(values) && !(values instanceof Float64Array)) {
    throw new TypeError(`${name} must be an array of numbers`);
  }
  if (values.length === 0) {
    throw new RangeError(`${name} must contain at least one entry`);
  }
  const out = new Array<number>(values.length);
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    if (typeof v !== "number" || Number.isNaN(v)) {
      throw new TypeError(`${name}[${i}] must be a number, got ${String(v)}`);
    }
    if (!Number.isFinite(v)) {
      throw new RangeError(`${name}[${i}] must be finite, got ${String(v)}`);
    }
    out[i] = v;
  }
  return out;
}

function requireSameLength(expert: number[], amateur: number[]): void {
  if (expert.length !== amateur.length) {
    throw new RangeError(
      `expert and amateur arrays differ in length: ${expert.length} vs ${amateur.length}`,
    );
  }
}

interface CombineReply {
  schema_version: number;
  engine_version: string;
  cd: Array<number | null>;
}

function restoreMask(reply: CombineReply, size: number): Float64Array {
  if (!Array.isArray(reply.cd) || reply.cd.length !== size) {
    throw new EngineError(
      `engine returned ${reply.cd?.length ?? "no"} scores for ${size} tokens`, 0, "",
    );
  }
  const out = new Float64Array(size);
  for (let i = 0; i < size; i++) {
    const v = reply.cd[i];
    out[i] = v === null ? Number.NEGATIVE_INFINITY : v;
  }
  return out;
}

function combinePayload(
  expert: NumericArray,
  amateur: NumericArray,
  config: BoundConfig,
): { payload: string; size: number } {
  const e = toPlainArray("expert", expert);
  const a = toPlainArray("amateur", amateur);
  requireSameLength(e, a);
  const resolved = resolveConfig(config);
  return {
    payload: JSON.stringify({
      expert: e,
      amateur: a,
      alpha: resolved.alpha,
      beta: resolved.beta,
      amateur_temp: resolved.amateurTemp,
      formulation: resolved.formulation,
    }),
    size: e.length,
  };
}

/**
 * Combined contrastive logits (1 + beta) * expert - beta * amateur on the
 * alpha-masked valid set; -Infinity elsewhere. Bit-identical to the
 * engine's in-process result.
 */
export function boundCdLogits(
  expert: NumericArray,
  amateur: NumericArray,
  alpha = 0.1,
  beta = 0.5,
): Float64Array {
  const { payload, size } = combinePayload(expert, amateur, { alpha, beta });
  const reply = parseReply<CombineReply>(runEngine(["combine"], payload), "combine");
  return restoreMask(reply, size);
}

/** Concurrent-friendly variant of boundCdLogits. */
export async function boundCdLogitsAsync(
  expert: NumericArray,
  amateur: NumericArray,
  alpha = 0.1,
  beta = 0.5,
): Promise<Float64Array> {
  const { payload, size } = combinePayload(expert, amateur, { alpha, beta });
  const reply = parseReply<CombineReply>(await runEngineAsync(["combine"], payload), "combine");
  return restoreMask(reply, size);
}

/**
 * Probability-space combination log p_e - log p_a with a tempered
 * amateur, masked on expert probabilities.
 */
export function combineOriginal(
  expert: NumericArray,
  amateur: NumericArray,
  amateurTemp = 1.0,
  alpha = 0.1,
): Float64Array {
  const { payload, size } = combinePayload(expert, amateur, {
    alpha,
    amateurTemp,
    formulation: "original",
  });
  const reply = parseReply<CombineReply>(runEngine(["combine"], payload), "combine");
  return restoreMask(reply, size);
}

/** Concurrent-friendly variant of combineOriginal. */
export async function combineOriginalAsync(
  expert: NumericArray,
  amateur: NumericArray,
  amateurTemp = 1.0,
  alpha = 0.1,
): Promise<Float64Array> {
  const { payload, size } = combinePayload(expert, amateur, {
    alpha,
    amateurTemp,
    formulation: "original",
  });
  const reply = parseReply<CombineReply>(await runEngineAsync(["combine"], payload), "combine");
  return restoreMask(reply, size);
}

/** Where the expert/amateur scorers come from; mirrors the CLI flags. */
export interface ScorerOptions {
  /** Saved n-gram scorer file for the expert. */
  expertPath?: string;
  /** Adapter command line for an external expert. */
  expertCmd?: string;
  /** Saved n-gram scorer file for the amateur. */
  amateurPath?: string;
  /** Adapter command line for an external amateur. */
  amateurCmd?: string;
  /** Misleading prefix: the amateur becomes the (wrapped) expert. */
  negativePrefix?: string;
  /** Experiment config supplying scorers and defaults. */
  configPath?: string;
}

function scorerFlags(options: ScorerOptions): string[] {
  const flags: string[] = [];
  if (options.configPath) flags.push("--config", options.configPath);
  if (options.expertPath) flags.push("--expert", options.expertPath);
  if (options.expertCmd) flags.push("--expert-cmd", options.expertCmd);
  if (options.amateurPath) flags.push("--amateur", options.amateurPath);
  if (options.amateurCmd) flags.push("--amateur-cmd", options.amateurCmd);
  if (options.negativePrefix !== undefined) flags.push("--negative-prefix", options.negativePrefix);
  if (flags.length === 0) {
    throw new RangeError("scorer options must name an expert source or a config file");
  }
  return flags;
}

export interface DecodeOptions extends ScorerOptions {
  config?: BoundConfig;
  maxNewTokens?: number;
  seed?: number;
  /** Run to full length instead of stopping at newline/EOS. */
  noStop?: boolean;
}

export interface DecodeResult {
  /** Generated text (special tokens skipped). */
  text: string;
  /** Token ids of the prompt, BOS first. */
  promptIds: number[];
  /** Token ids of the generated continuation. */
  continuationIds: number[];
  finishReason: string;
  seed: number;
  vocabId: string;
}

interface DecodeReply {
  schema_version: number;
  vocab_id: string;
  prompt: number[];
  continuation: number[];
  text: string;
  per_step: number[][];
  finish_reason: string;
  seed: number;
}

function runDecode(
  strategy: string,
  prompt: string,
  options: DecodeOptions,
  extra: string[] = [],
): DecodeResult {
  const resolved = resolveConfig(options.config ?? {});
  const maxNewTokens = options.maxNewTokens ?? 64;
  if (!Number.isInteger(maxNewTokens) || maxNewTokens < 1) {
    throw new RangeError(`maxNewTokens must be a positive integer, got ${maxNewTokens}`);
  }
  const args = [
    "decode",
    ...scorerFlags(options),
    "--strategy", strategy,
    "--prompt", prompt,
    "--seed", String(options.seed ?? resolved.seed),
    "--max-new-tokens", String(maxNewTokens),
    "--alpha", String(resolved.alpha),
    "--beta", String(resolved.beta),
    "--temperature", String(resolved.outputTemp),
    "--formulation", resolved.formulation,
    ...extra,
    "--json",
  ];
  if (options.noStop) args.push("--no-stop");
  const reply = parseReply<DecodeReply>(runEngine(args), "decode");
  return {
    text: reply.text,
    promptIds: [...reply.prompt],
    continuationIds: [...reply.continuation],
    finishReason: reply.finish_reason,
    seed: reply.seed,
    vocabId: reply.vocab_id,
  };
}

/** Deterministic contrastive-greedy generation. */
export function decodeCdGreedy(prompt: string, options: DecodeOptions): DecodeResult {
  return runDecode("cd_greedy", prompt, options);
}

export type SamplingStrategy = "sample" | "cd_sample" | "mask_only" | "top_k" | "nucleus";

export interface SampleOptions extends DecodeOptions {
  /** Which sampler to run; default "cd_sample". */
  strategy?: SamplingStrategy;
  /** k for top_k. */
  k?: number;
  /** Cumulative mass for nucleus. */
  p?: number;
}

/** Seeded sampled generation (contrastive by default). */
export function decodeSample(prompt: string, options: SampleOptions): DecodeResult {
  const extra: string[] = [];
  if (options.k !== undefined) extra.push("--k", String(options.k));
  if (options.p !== undefined) extra.push("--p", String(options.p));
  return runDecode(options.strategy ?? "cd_sample", prompt, options, extra);
}

export interface RankTaskInput {
  /** Context token ids, BOS first. */
  context: ReadonlyArray<number>;
  /** Candidate completions as token-id arrays (at least two). */
  candidates: ReadonlyArray<ReadonlyArray<number>>;
  /** Index of the gold candidate, when known. */
  gold?: number;
  /** Vocabulary the ids refer to; default the engine's arithmetic vocab. */
  vocabId?: string;
}

export interface RankedScore {
  index: number;
  /** Summed log-score; null when the candidate is masked out. */
  raw: number | null;
  normalized: number | null;
}

export interface RankTaskResult {
  /** Candidate index ranked first. */
  topIndex: number;
  /** Whether topIndex equals gold; null when no gold was given. */
  correct: boolean | null;
  /** All candidates, best first. */
  scores: RankedScore[];
}

export interface RankOptions extends ScorerOptions {
  config?: BoundConfig;
  norm?: "characters" | "tokens" | "none";
  applyMask?: boolean;
}

interface RankReply {
  accuracy: number | null;
  tasks: Array<{
    top_index: number;
    correct: boolean | null;
    scores: Array<{ index: number; raw: number | null; normalized: number | null }>;
  }>;
}

function checkIdArray(name: string, ids: ReadonlyArray<number>): number[] {
  if (!Array.isArray(ids) || ids.length === 0) {
    throw new RangeError(`${name} must be a non-empty array of token ids`);
  }
  return ids.map((v, i) => {
    if (!Number.isInteger(v) || v < 0) {
      throw new TypeError(`${name}[${i}] must be a non-negative integer, got ${String(v)}`);
    }
    return v;
  });
}

/** Score one multiple-choice task; candidates ranked best-first. */
export function rankTask(task: RankTaskInput, options: RankOptions): RankTaskResult {
  const context = checkIdArray("context", task.context);
  if (!Array.isArray(task.candidates) || task.candidates.length < 2) {
    throw new RangeError("a choice task needs at least 2 candidates");
  }
  const candidates = task.candidates.map((c, i) => checkIdArray(`candidates[${i}]`, c));
  if (task.gold !== undefined && !(Number.isInteger(task.gold) && task.gold >= 0 && task.gold < candidates.length)) {
    throw new RangeError(`gold index out of range: ${String(task.gold)}`);
  }
  const resolved = resolveConfig(options.config ?? {});
  const line = JSON.stringify({
    schema_version: 1,
    vocab_id: task.vocabId ?? "arithmetic-char-v1",
    context,
    candidates,
    gold: task.gold ?? null,
  });
  const dir = mkdtempSync(join(tmpdir(), "cdkit-bindings-"));
  try {
    const tasksPath = join(dir, "tasks.jsonl");
    writeFileSync(tasksPath, line + "\n", "utf8");
    const args = [
      "rank",
      ...scorerFlags(options),
      "--tasks", tasksPath,
      "--norm", options.norm ?? "characters",
      "--alpha", String(resolved.alpha),
      "--beta", String(resolved.beta),
      "--formulation", resolved.formulation,
      "--json",
    ];
    if (options.applyMask === false) args.push("--no-mask");
    const reply = parseReply<RankReply>(runEngine(args), "rank");
    const row = reply.tasks[0];
    return {
      topIndex: row.top_index,
      correct: row.correct,
      scores: row.scores.map((s) => ({ index: s.index, raw: s.raw, normalized: s.normalized })),
    };
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

export interface SelfConsistencyOptions extends SampleOptions {
  pattern?: "last-number" | "after-marker";
  marker?: string;
}

export interface SelfConsistencyResult {
  /** Winning canonical answer; empty string when nothing parsed. */
  winner: string;
  /** Canonical answer -> vote count. */
  counts: Record<string, number>;
  k: number;
  validPaths: number;
  /** Per-path canonical answers ("" for unparseable paths). */
  answers: string[];
}

interface SelfConsReply {
  winner: string;
  counts: Record<string, number>;
  k: number;
  valid_paths: number;
  answers: string[];
}

/** Majority vote over k sampled reasoning paths. */
export function selfConsistency(
  prompt: string,
  k: number,
  options: SelfConsistencyOptions,
): SelfConsistencyResult {
  if (!Number.isInteger(k) || k < 1) {
    throw new RangeError(`k must be a positive integer, got ${String(k)}`);
  }
  const resolved = resolveConfig(options.config ?? {});
  const args = [
    "selfcons",
    ...scorerFlags(options),
    "--strategy", options.strategy ?? "cd_sample",
    "--prompt", prompt,
    "--k", String(k),
    "--seed", String(options.seed ?? resolved.seed),
    "--max-new-tokens", String(options.maxNewTokens ?? 64),
    "--alpha", String(resolved.alpha),
    "--beta", String(resolved.beta),
    "--temperature", String(resolved.outputTemp),
    "--formulation", resolved.formulation,
    "--pattern", options.pattern ?? "last-number",
    "--json",
  ];
  if (options.marker !== undefined) args.push("--marker", options.marker);
  if (options.noStop) args.push("--no-stop");
  const reply = parseReply<SelfConsReply>(runEngine(args), "selfcons");
  return {
    winner: reply.winner,
    counts: { ...reply.counts },
    k: reply.k,
    validPaths: reply.valid_paths,
    answers: [...reply.answers],
  };
}
