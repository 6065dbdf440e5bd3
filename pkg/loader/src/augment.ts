/**
 * Affine augmentation mirroring the dataset pipeline: parameters drawn from
 * the shared counter RNG, transform composed scale -> shear -> rotate ->
 * translate about the image center, bilinear resampling with zero fill.
 * The arithmetic intentionally matches the reference implementation
 * expression for expression.
 */

import { uniform } from './rng.js';

export interface AugmentParams {
  rotation: number; // degrees
  translateX: number; // fraction of width
  translateY: number; // fraction of height
  scale: number;
  shear: number; // degrees, both axes
  seed: number;
  index: number;
}

export interface ImageData {
  width: number;
  height: number;
  pixels: Float32Array; // row-major
}

const AUGMENT_STREAM_BASE = 2n ** 32n;

export const ROTATION_RANGE: [number, number] = [-5.0, 5.0];
export const TRANSLATION_RANGE: [number, number] = [-0.05, 0.05];
export const SCALE_RANGE: [number, number] = [0.9, 1.1];
export const SHEAR_RANGE: [number, number] = [-10.0, 10.0];

export function sampleAugment(seed: number, index: number): AugmentParams {
  const stream = AUGMENT_STREAM_BASE + BigInt(index);
  return {
    rotation: uniform(seed, stream, 0, ...ROTATION_RANGE),
    translateX: uniform(seed, stream, 1, ...TRANSLATION_RANGE),
    translateY: uniform(seed, stream, 2, ...TRANSLATION_RANGE),
    scale: uniform(seed, stream, 3, ...SCALE_RANGE),
    shear: uniform(seed, stream, 4, ...SHEAR_RANGE),
    seed,
    index,
  };
}

export function warpAffine(img: ImageData, p: AugmentParams): Float32Array {
  const { width: w, height: h, pixels } = img;
  const cx = (w - 1) / 2.0;
  const cy = (h - 1) / 2.0;
  const tx = p.translateX * w;
  const ty = p.translateY * h;

  const th = (p.rotation * Math.PI) / 180.0;
  const sh = Math.tan((p.shear * Math.PI) / 180.0);
  // m = rotate @ shear @ scale
  const r00 = Math.cos(th), r01 = -Math.sin(th);
  const r10 = Math.sin(th), r11 = Math.cos(th);
  const m00 = (r00 * 1 + r01 * sh) * p.scale;
  const m01 = (r00 * sh + r01 * 1) * p.scale;
  const m10 = (r10 * 1 + r11 * sh) * p.scale;
  const m11 = (r10 * sh + r11 * 1) * p.scale;

  const det = m00 * m11 - m01 * m10;
  if (det === 0) throw new Error('augmentation matrix is singular');
  const i00 = m11 / det, i01 = -m01 / det;
  const i10 = -m10 / det, i11 = m00 / det;

  const out = new Float32Array(w * h);
  for (let row = 0; row < h; row++) {
    const ys = row - cy - ty;
    for (let col = 0; col < w; col++) {
      const xs = col - cx - tx;
      const srcX = i00 * xs + i01 * ys + cx;
      const srcY = i10 * xs + i11 * ys + cy;
      const x0 = Math.floor(srcX);
      const y0 = Math.floor(srcY);
      const fx = srcX - x0;
      const fy = srcY - y0;

      const sample = (yi: number, xi: number): number => {
        if (xi < 0 || xi >= w || yi < 0 || yi >= h) return 0.0;
        return pixels[yi * w + xi];
      };
      const v00 = sample(y0, x0);
      const v01 = sample(y0, x0 + 1);
      const v10 = sample(y0 + 1, x0);
      const v11 = sample(y0 + 1, x0 + 1);
      const blended =
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
      out[row * w + col] = Math.min(1.0, Math.max(0.0, blended));
    }
  }
  return out;
}
