/**
 * Iterable (image, label, patient) dataset over a manifest + split plan.
 *
 * Yields exactly the patients assigned to (seed, fold, role) — never more,
 * never fewer.  Curriculum mode orders them extremes-first using the ranks
 * the manifest carries; augmentation replays the pipeline's counter-based
 * affine draws keyed by (split seed, sample index), so every worker and
 * every language sees the same transforms.
 */

import * as path from 'node:path';

import { sampleAugment, warpAffine, type AugmentParams, type ImageData } from './augment.js';
import { readManifest, readSplit, type ManifestRecord } from './manifest.js';
import { readRaster } from './raster.js';

export interface LoaderSpec {
  manifestPath: string;
  splitPath: string;
  role: 'train' | 'val';
  view?: 'pa' | 'la';
  curriculum?: boolean;
  augment?: boolean;
  /** Root for DRR paths; defaults to the manifest's directory. */
  rasterRoot?: string;
}

export interface Sample {
  image: ImageData;
  label: 0 | 1;
  patientId: string;
  params?: AugmentParams;
}

export function* iterate(spec: LoaderSpec): Generator<Sample> {
  const records = readManifest(spec.manifestPath);
  const split = readSplit(spec.splitPath);
  const view = spec.view ?? 'pa';
  const root = spec.rasterRoot ?? path.dirname(spec.manifestPath);

  const byId = new Map(records.map((r) => [r.patientId, r]));
  const wanted = spec.role === 'train' ? split.train : split.val;
  for (const pid of wanted) {
    if (!byId.has(pid)) {
      throw new Error(`${spec.splitPath}: patient ${pid} not present in the manifest`);
    }
  }

  let ordered: ManifestRecord[] = wanted.map((pid) => byId.get(pid)!);
  if (spec.curriculum) {
    ordered = [...ordered].sort((a, b) => a.curriculumRank - b.curriculumRank);
  }

  let shape: [number, number] | null = null;
  for (let i = 0; i < ordered.length; i++) {
    const record = ordered[i];
    const rel = record.drrPaths[view];
    if (!rel) {
      throw new Error(`${record.patientId}: manifest has no ${view} raster`);
    }
    const image = readRaster(path.join(root, rel));
    if (shape === null) {
      shape = [image.width, image.height];
    } else if (image.width !== shape[0] || image.height !== shape[1]) {
      throw new Error(
        `${record.patientId}: raster is ${image.width}x${image.height}, ` +
          `dataset started at ${shape[0]}x${shape[1]}`,
      );
    }
    const sample: Sample = {
      image,
      label: record.binary === 'positive' ? 1 : 0,
      patientId: record.patientId,
    };
    if (spec.augment) {
      const params = sampleAugment(split.seed, i);
      sample.image = { ...image, pixels: warpAffine(image, params) };
      sample.params = params;
    }
    yield sample;
  }
}

export function collect(spec: LoaderSpec): Sample[] {
  return [...iterate(spec)];
}
