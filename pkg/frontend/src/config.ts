/**
 * BoundConfig mirrors the engine's decoding configuration as plain
 * scalars, with the same validation rules enforced locally so bad
 * values fail fast as native exceptions (TypeError for non-numbers,
 * RangeError for out-of-range values) instead of subprocess errors.
 */

export type Formulation = "original" | "refactored";

export interface BoundConfig {
  /** Mask threshold in (0, 1]; default 0.1. */
  alpha?: number;
  /** Contrast strength >= 0; default 0.5. */
  beta?: number;
  /** Expert logit temperature > 0; default 1. */
  expertTemp?: number;
  /** Amateur logit temperature > 0; default 1. */
  amateurTemp?: number;
  /** Output/sampling temperature > 0; default 1. */
  outputTemp?: number;
  /** Which combination rule to use; default "refactored". */
  formulation?: Formulation;
  /** Argmax tie handling; the engine supports only "lowest-token-id". */
  tieBreak?: "lowest-token-id";
  /** 64-bit unsigned seed carried for standalone use; default 0. */
  seed?: number;
}

export type ResolvedBoundConfig = Required<BoundConfig>;

const U64 = 2 ** 64;

function requireNumber(name: string, value: unknown): number {
  if (typeof value !== "number" || Number.isNaN(value)) {
    throw new TypeError(`${name} must be a number, got ${String(value)}`);
  }
  if (!Number.isFinite(value)) {
    throw new RangeError(`${name} must be finite, got ${String(value)}`);
  }
  return value;
}

// explicit undefined checks: null is a caller mistake, not "use default"
function orDefault<T>(value: T | undefined, fallback: T): T {
  return value === undefined ? fallback : value;
}

/** Apply defaults and enforce the engine's invariants natively. */
export function resolveConfig(config: BoundConfig = {}): ResolvedBoundConfig {
  const alpha = requireNumber("alpha", orDefault(config.alpha, 0.1));
  if (!(alpha > 0 && alpha <= 1)) {
    throw new RangeError(`alpha must be in (0, 1], got ${alpha}`);
  }
  const beta = requireNumber("beta", orDefault(config.beta, 0.5));
  if (beta < 0) {
    throw new RangeError(`beta must be >= 0, got ${beta}`);
  }
  const temps = {
    expertTemp: requireNumber("expertTemp", orDefault(config.expertTemp, 1.0)),
    amateurTemp: requireNumber("amateurTemp", orDefault(config.amateurTemp, 1.0)),
    outputTemp: requireNumber("outputTemp", orDefault(config.outputTemp, 1.0)),
  };
  for (const [name, value] of Object.entries(temps)) {
    if (!(value > 0)) {
      throw new RangeError(`${name} must be > 0, got ${value}`);
    }
  }
  const formulation = orDefault<Formulation>(config.formulation, "refactored");
  if (formulation !== "original" && formulation !== "refactored") {
    throw new RangeError(
      `formulation must be "original" or "refactored", got ${String(formulation)}`,
    );
  }
  const tieBreak = orDefault(config.tieBreak, "lowest-token-id");
  if (tieBreak !== "lowest-token-id") {
    throw new RangeError(`tieBreak must be "lowest-token-id", got ${String(tieBreak)}`);
  }
  const seed = requireNumber("seed", orDefault(config.seed, 0));
  if (!Number.isInteger(seed) || seed < 0 || seed >= U64) {
    throw new RangeError(`seed must be a 64-bit unsigned integer, got ${seed}`);
  }
  return { alpha, beta, ...temps, formulation, tieBreak, seed };
}
