import { createHash } from 'node:crypto';

export type Pooling = 'mean' | 'last_token';

export interface EncodeResult {
  embedding: Float32Array;
  truncatedImages: boolean;
}

/**
 * Deterministic hashed-feature encoder, the lightweight fallback used when
 * no real vision-language model is mounted. Text tokens (and the first
 * image's bytes) hash into signed buckets of a fixed-width vector, so
 * identical requests always produce identical embeddings — enough to
 * exercise the wire protocol and the export path end to end.
 */
export class HashEncoder {
  readonly dim: number;
  readonly modelTag: string;
  private readonly seed: number;

  constructor(dim = 768, seed = 0) {
    if (!Number.isInteger(dim) || dim < 1) throw new Error(`bad dim: ${dim}`);
    this.dim = dim;
    this.seed = seed;
    this.modelTag = `hashenc-${dim}-s${seed}`;
  }

  private bucket(token: string): { index: number; sign: number } {
    const digest = createHash('sha256').update(`${this.seed}|${token}`).digest();
    return {
      index: digest.readUInt32LE(0) % this.dim,
      sign: digest[4]! & 1 ? 1 : -1,
    };
  }

  /**
   * Embed one (text, images) pair. Only the first image is consumed —
   * the single-image policy of the upstream pipeline — and consuming
   * fewer images than were supplied is reported via truncatedImages.
   */
  encode(
    text: string,
    images: Buffer[],
    pooling: Pooling = 'mean',
    normalize = true,
  ): EncodeResult {
    const tokens = text
      .toLowerCase()
      .split(/\s+/)
      .filter((t) => t.length > 0);
    if (images.length > 0) {
      const imageHash = createHash('sha256').update(images[0]!).digest('hex');
      tokens.push(`img:${imageHash.slice(0, 16)}`);
    }

    // accumulate in f64, round to f32 once at the end
    const acc = new Float64Array(this.dim);
    if (pooling === 'last_token') {
      if (tokens.length > 0) {
        const { index, sign } = this.bucket(tokens[tokens.length - 1]!);
        acc[index] = sign;
      }
    } else {
      for (const token of tokens) {
        const { index, sign } = this.bucket(token);
        acc[index] += sign / tokens.length;
      }
    }
    if (normalize) {
      let norm = 0;
      for (const v of acc) norm += v * v;
      norm = Math.sqrt(norm);
      if (norm > 0) for (let i = 0; i < acc.length; i++) acc[i] /= norm;
    }

    const embedding = new Float32Array(acc);
    return { embedding, truncatedImages: images.length > 1 };
  }
}
