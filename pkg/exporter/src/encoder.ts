/**
 * Deterministic stand-in encoders.
 *
 * The engine only cares about the file formats, so any encoder that maps
 * images/phrases to fixed-width vectors reproducibly will do. The built-in
 * "toy-clip-<dim>" family hashes its input into a seeded random projection;
 * a real vision-language checkpoint can be wired in behind the same
 * interface without touching the callers.
 */

export class EncoderLoadFailure extends Error {}
export class PhraseTooLong extends Error {}

export const TOKEN_BUDGET = 77;

/** FNV-1a, 32-bit. */
export function hashString(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

/** mulberry32: tiny deterministic PRNG over float64 ops only. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Standard normal draws via Box-Muller. */
export function gaussians(rand: () => number, count: number): Float64Array {
  const out = new Float64Array(count);
  for (let i = 0; i < count; i += 2) {
    let u = 0;
    while (u === 0) u = rand();
    const v = rand();
    const mag = Math.sqrt(-2.0 * Math.log(u));
    out[i] = mag * Math.cos(2 * Math.PI * v);
    if (i + 1 < count) out[i + 1] = mag * Math.sin(2 * Math.PI * v);
  }
  return out;
}

export interface ImageEncoder {
  id: string;
  dim: number;
  /** raw grid features -> embedding */
  encode(features: Float64Array): Float64Array;
  gridSize: number;
}

const TOY_PREFIX = "toy-clip-";

/**
 * Seeded random projection from an 8x8 RGB grid (192 values) to `dim`.
 * The projection matrix is a pure function of the encoder id, so
 * re-exports are bitwise identical.
 */
export function loadImageEncoder(id: string): ImageEncoder {
  if (!id.startsWith(TOY_PREFIX)) {
    throw new EncoderLoadFailure(
      `unknown encoder ${JSON.stringify(id)}; built-in ids look like toy-clip-32`,
    );
  }
  const dim = Number(id.slice(TOY_PREFIX.length));
  if (!Number.isInteger(dim) || dim < 2) {
    throw new EncoderLoadFailure(`bad encoder dim in ${JSON.stringify(id)}`);
  }
  const gridSize = 8;
  const inputDim = gridSize * gridSize * 3;
  const rand = mulberry32(hashString(`projection${id}`));
  const matrix = gaussians(rand, dim * inputDim);
  const scale = 1 / Math.sqrt(inputDim);
  return {
    id,
    dim,
    gridSize,
    encode(features: Float64Array): Float64Array {
      if (features.length !== inputDim) {
        throw new Error(`expected ${inputDim} grid values, got ${features.length}`);
      }
      const out = new Float64Array(dim);
      for (let r = 0; r < dim; r++) {
        let acc = 0;
        const base = r * inputDim;
        for (let c = 0; c < inputDim; c++) {
          acc += matrix[base + c] * features[c];
        }
        out[r] = acc * scale;
      }
      return out;
    },
  };
}

/**
 * Deterministic unit text embedding; same canonical phrase, same vector.
 * Phrases longer than the token budget are rejected rather than silently
 * truncated.
 */
export function encodeText(text: string, dim: number, encoderId: string): Float64Array {
  const tokens = text.split(/\s+/).filter((t) => t.length > 0);
  if (tokens.length > TOKEN_BUDGET) {
    throw new PhraseTooLong(
      `phrase has ${tokens.length} tokens, budget is ${TOKEN_BUDGET}: ${JSON.stringify(text)}`,
    );
  }
  const rand = mulberry32(hashString(`text${encoderId}${text}`));
  const vec = gaussians(rand, dim);
  let norm = 0;
  for (let i = 0; i < dim; i++) norm += vec[i] * vec[i];
  norm = Math.sqrt(norm);
  const out = new Float64Array(dim);
  for (let i = 0; i < dim; i++) out[i] = vec[i] / norm;
  return out;
}
