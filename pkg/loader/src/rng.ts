/**
 * Counter-based deterministic RNG, bit-compatible with the pipeline that
 * writes the datasets this loader consumes.
 *
 * splitmix64 finalizer keyed by (seed, stream) and indexed by a counter;
 * uniforms take the top 53 bits, so the resulting doubles are identical
 * across languages. Augmentation draws live on streams 2^32 + sampleIndex.
 */

const MASK64 = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

export function mix64(z: bigint): bigint {
  z = (z + GOLDEN) & MASK64;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
  return z ^ (z >> 31n);
}

export function streamKey(seed: bigint, stream: bigint): bigint {
  return mix64(mix64(seed & MASK64) ^ ((((stream & MASK64) * GOLDEN) & MASK64)));
}

export function raw64(seed: number | bigint, stream: number | bigint, counter: number | bigint): bigint {
  const key = streamKey(BigInt(seed), BigInt(stream));
  return mix64((key + ((BigInt(counter) & MASK64) * GOLDEN & MASK64)) & MASK64);
}

export function uniform(
  seed: number | bigint,
  stream: number | bigint,
  counter: number | bigint,
  lo = 0.0,
  hi = 1.0,
): number {
  const u = Number(raw64(seed, stream, counter) >> 11n) * 2 ** -53;
  return lo + u * (hi - lo);
}
