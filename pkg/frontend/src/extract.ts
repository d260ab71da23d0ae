/** The four extraction commands backing the cvf-extract CLI. */

import { mkdirSync, writeFileSync } from 'fs'
import { join } from 'path'

import { extractFeatures, lpipsLayers, pooledLayer } from './backbone.js'
import type { CvfLayer } from './cvf.js'
import { writeCvf } from './cvf.js'
import { loadPng } from './image.js'
import type { Manifest, SamplePair } from './manifest.js'
import { loadManifest } from './manifest.js'
import { trainAndPredict } from './train.js'

/** image kinds per pair: the real street view plus each generated method */
function* pairImages(pair: SamplePair): Generator<[kind: string, path: string]> {
  yield ['street', pair.street]
  for (const [method, path] of Object.entries(pair.generated)) {
    yield [method, path]
  }
}

async function writePerImage(
  manifest: Manifest,
  outDir: string,
  layersFor: (features: Awaited<ReturnType<typeof extractFeatures>>) => CvfLayer[],
): Promise<number> {
  mkdirSync(outDir, { recursive: true })
  let written = 0
  for (const pair of manifest.pairs) {
    for (const [kind, path] of pairImages(pair)) {
      const features = await extractFeatures(loadPng(path))
      writeCvf(join(outDir, `${pair.id}.${kind}.cvf`), layersFor(features))
      written++
    }
  }
  return written
}

/** fid: one pooled vector per image. */
export async function extractFid(manifestPath: string, outDir: string): Promise<number> {
  return writePerImage(loadManifest(manifestPath), outDir, (f) => [pooledLayer(f)])
}

/**
 * lpips: layered activation maps with per-channel weight blocks. The pooled
 * vector is included too so one directory feeds the harness's whole tier-1
 * pipeline (LPIPS and FID).
 */
export async function extractLpips(manifestPath: string, outDir: string): Promise<number> {
  return writePerImage(loadManifest(manifestPath), outDir, (f) => [pooledLayer(f), ...lpipsLayers(f)])
}

/**
 * cas-features: one feature-set file per image kind (street.cvf plus
 * {method}.cvf), whose 1-D layers are named by pair id — the shape
 * `crossview-eval cas train/eval --features` expects.
 */
export async function extractCasFeatures(manifestPath: string, outDir: string): Promise<number> {
  const manifest = loadManifest(manifestPath)
  mkdirSync(outDir, { recursive: true })
  const kinds = ['street', ...manifest.methods]
  let written = 0
  for (const kind of kinds) {
    const layers: CvfLayer[] = []
    for (const pair of manifest.pairs) {
      const path = kind === 'street' ? pair.street : pair.generated[kind]
      if (!path) continue
      const features = await extractFeatures(loadPng(path))
      layers.push(pooledLayer(features, pair.id))
    }
    if (layers.length > 0) {
      writeCvf(join(outDir, `${kind}.cvf`), layers)
      written++
    }
  }
  return written
}

/**
 * cas-labels: train the severity head on the training manifest's real
 * street images (Adam, lr 1e-4, batch 32, 10 epochs), freeze it, and write
 * predicted labels for every (pair, method) of the target manifest plus
 * ground_truth rows for the real street images.
 */
export async function extractCasLabels(
  manifestPath: string,
  outDir: string,
  trainManifestPath?: string,
  seed = 0,
): Promise<string> {
  const manifest = loadManifest(manifestPath)
  const trainManifest = trainManifestPath ? loadManifest(trainManifestPath) : manifest
  mkdirSync(outDir, { recursive: true })
  const rows = await trainAndPredict(trainManifest, manifest, seed)
  const csv = ['pair_id,method,predicted_label', ...rows.map((r) => `${r.pairId},${r.method},${r.label}`)]
  const outPath = join(outDir, 'predicted_labels.csv')
  writeFileSync(outPath, csv.join('\n') + '\n')
  return outPath
}
