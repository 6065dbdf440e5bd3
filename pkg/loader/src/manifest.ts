/**
 * Parsers for the dataset manifest (tab-separated, one patient per line,
 * carrying curriculum rank/phase) and per-(seed, fold) split plan files.
 */

import * as fs from 'node:fs';

export interface ManifestRecord {
  patientId: string;
  agatston: number;
  binary: 'negative' | 'positive';
  mode: string;
  curriculumRank: number;
  curriculumPhase: number;
  drrPaths: { pa?: string; la?: string };
}

const MANIFEST_HEADER =
  'patient_id\tagatston\tbinary\tmode\tcurriculum_rank\tcurriculum_phase\tdrr_pa\tdrr_la';

export function readManifest(path: string): ManifestRecord[] {
  const lines = fs.readFileSync(path, 'utf-8').split('\n');
  if (lines[0] !== MANIFEST_HEADER) {
    throw new Error(`${path}: bad manifest header`);
  }
  const records: ManifestRecord[] = [];
  for (const line of lines.slice(1)) {
    if (!line.trim()) continue;
    const cols = line.split('\t');
    if (cols.length !== 8) throw new Error(`${path}: bad manifest row: ${line}`);
    const [pid, score, binary, mode, rank, phase, pa, la] = cols;
    if (binary !== 'negative' && binary !== 'positive') {
      throw new Error(`${path}: bad label ${binary} for ${pid}`);
    }
    const drrPaths: ManifestRecord['drrPaths'] = {};
    if (pa) drrPaths.pa = pa;
    if (la) drrPaths.la = la;
    records.push({
      patientId: pid,
      agatston: Number(score),
      binary,
      mode,
      curriculumRank: Number(rank),
      curriculumPhase: Number(phase),
      drrPaths,
    });
  }
  return records;
}

export interface SplitFile {
  seed: number;
  fold: number;
  train: string[];
  val: string[];
}

export function readSplit(path: string): SplitFile {
  const lines = fs.readFileSync(path, 'utf-8').split('\n');
  if (lines[0] !== 'seed\tfold\tpatient_id\trole') {
    throw new Error(`${path}: bad split header`);
  }
  let seed: number | null = null;
  let fold: number | null = null;
  const train: string[] = [];
  const val: string[] = [];
  for (const line of lines.slice(1)) {
    if (!line.trim()) continue;
    const [s, f, pid, role] = line.split('\t');
    const si = Number(s);
    const fi = Number(f);
    if (seed === null) {
      seed = si;
      fold = fi;
    } else if (si !== seed || fi !== fold) {
      throw new Error(`${path}: mixed (seed, fold) keys`);
    }
    if (role === 'train') train.push(pid);
    else if (role === 'val') val.push(pid);
    else throw new Error(`${path}: bad role ${role}`);
  }
  if (seed === null || fold === null) throw new Error(`${path}: empty split file`);
  return { seed, fold, train, val };
}
