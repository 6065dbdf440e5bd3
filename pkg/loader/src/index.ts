export { mix64, raw64, streamKey, uniform } from './rng.js';
export {
  ROTATION_RANGE,
  SCALE_RANGE,
  SHEAR_RANGE,
  TRANSLATION_RANGE,
  sampleAugment,
  warpAffine,
  type AugmentParams,
  type ImageData,
} from './augment.js';
export { RasterError, readHeader, readRaster } from './raster.js';
export { readManifest, readSplit, type ManifestRecord, type SplitFile } from './manifest.js';
export { collect, iterate, type LoaderSpec, type Sample } from './loader.js';
