/**
 * Reader for raster bundles: a directory with a `header` of `key: value`
 * lines and a little-endian float32 `voxels.raw` payload, x-fastest.  For
 * 2-D rasters that payload order is exactly row-major [row][col].
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import type { ImageData } from './augment.js';

export class RasterError extends Error {}

interface Header {
  shape: number[];
  spacing: number[];
  dtype: string;
  patientId: string;
}

export function readHeader(bundleDir: string): Header {
  const headerPath = path.join(bundleDir, 'header');
  if (!fs.existsSync(headerPath)) {
    throw new RasterError(`${bundleDir}: missing bundle header`);
  }
  const entries = new Map<string, string>();
  for (const line of fs.readFileSync(headerPath, 'utf-8').split('\n')) {
    if (!line.trim()) continue;
    const idx = line.indexOf(':');
    if (idx < 0) throw new RasterError(`${headerPath}: expected 'key: value'`);
    entries.set(line.slice(0, idx).trim(), line.slice(idx + 1).trim());
  }
  const shapeText = entries.get('shape');
  const dtype = entries.get('dtype');
  if (!shapeText || !dtype) throw new RasterError(`${headerPath}: missing shape/dtype`);
  return {
    shape: shapeText.split(/\s+/).map(Number),
    spacing: (entries.get('spacing') ?? '').split(/\s+/).map(Number),
    dtype,
    patientId: entries.get('patient_id') ?? '',
  };
}

export function readRaster(bundleDir: string): ImageData {
  const header = readHeader(bundleDir);
  if (header.shape.length !== 2) {
    throw new RasterError(`${bundleDir}: expected a 2-D raster, got shape ${header.shape}`);
  }
  if (header.dtype !== 'f32') {
    throw new RasterError(`${bundleDir}: raster dtype must be f32, got ${header.dtype}`);
  }
  const [width, height] = header.shape;
  const payloadPath = path.join(bundleDir, 'voxels.raw');
  if (!fs.existsSync(payloadPath)) {
    throw new RasterError(`${bundleDir}: missing voxels.raw`);
  }
  const buf = fs.readFileSync(payloadPath);
  const expected = width * height * 4;
  if (buf.byteLength !== expected) {
    throw new RasterError(
      `${payloadPath}: payload is ${buf.byteLength} bytes, shape needs ${expected}`,
    );
  }
  const pixels = new Float32Array(buf.buffer, buf.byteOffset, width * height);
  return { width, height, pixels: pixels.slice() };
}
