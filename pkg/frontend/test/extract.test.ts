import { mkdirSync, mkdtempSync, readFileSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { PNG } from 'pngjs'
import { beforeAll, describe, expect, it } from 'vitest'

import { readCvf } from '../src/cvf.js'
import { extractCasFeatures, extractCasLabels, extractFid, extractLpips } from '../src/extract.js'
import { loadManifest } from '../src/manifest.js'

const LABELS = ['mild', 'moderate', 'severe'] as const

function writePng(path: string, base: number, size = 20): void {
  const png = new PNG({ width: size, height: size })
  for (let i = 0; i < size * size; i++) {
    png.data[i * 4] = (base + i) % 256
    png.data[i * 4 + 1] = (base * 3 + i * 7) % 256
    png.data[i * 4 + 2] = (base * 5 + i * 13) % 256
    png.data[i * 4 + 3] = 255
  }
  writeFileSync(path, PNG.sync.write(png))
}

let corpusDir: string
let manifestPath: string

beforeAll(() => {
  corpusDir = mkdtempSync(join(tmpdir(), 'corpus-'))
  mkdirSync(join(corpusDir, 'img'))
  const pairs = LABELS.map((label, i) => {
    const id = `${label}-0`
    const files = {
      satellite: `img/${id}_sat.png`,
      street: `img/${id}_street.png`,
      gen: `img/${id}_m1.png`,
    }
    writePng(join(corpusDir, files.satellite), 10 + i * 60)
    writePng(join(corpusDir, files.street), 30 + i * 60)
    writePng(join(corpusDir, files.gen), 50 + i * 60)
    return {
      id,
      satellite: files.satellite,
      street: files.street,
      label,
      generated: { m1: files.gen },
    }
  })
  manifestPath = join(corpusDir, 'manifest.json')
  writeFileSync(manifestPath, JSON.stringify({ methods: ['m1'], pairs }))
})

describe('manifest loading', () => {
  it('resolves relative paths and labels', () => {
    const manifest = loadManifest(manifestPath)
    expect(manifest.methods).toEqual(['m1'])
    expect(manifest.pairs.length).toBe(3)
    expect(manifest.pairs[0].street).toContain(corpusDir)
  })
})

describe('extraction commands', () => {
  it('fid writes one pooled file per image', async () => {
    const out = join(corpusDir, 'fid')
    const n = await extractFid(manifestPath, out)
    expect(n).toBe(6) // street + m1 for 3 pairs
    const layers = readCvf(join(out, 'mild-0.street.cvf'))
    expect(layers.map((l) => l.name)).toEqual(['pool'])
    expect(layers[0].dims).toEqual([56])
  })

  it('lpips writes pooled plus layered maps with weights', async () => {
    const out = join(corpusDir, 'lpips')
    const n = await extractLpips(manifestPath, out)
    expect(n).toBe(6)
    const layers = readCvf(join(out, 'severe-0.m1.cvf'))
    expect(layers.map((l) => l.name)).toEqual(['pool', 'conv1', 'conv2', 'conv3'])
    for (const layer of layers.slice(1)) {
      expect(layer.dims.length).toBe(3)
      expect(layer.weights).toBeDefined()
    }
  })

  it('extraction is deterministic across runs (byte-identical)', async () => {
    const a = join(corpusDir, 'det-a')
    const b = join(corpusDir, 'det-b')
    await extractFid(manifestPath, a)
    await extractFid(manifestPath, b)
    const fileA = readFileSync(join(a, 'moderate-0.street.cvf'))
    const fileB = readFileSync(join(b, 'moderate-0.street.cvf'))
    expect(fileA.equals(fileB)).toBe(true)
  })

  it('cas-features writes per-kind feature sets keyed by pair id', async () => {
    const out = join(corpusDir, 'casfeat')
    const n = await extractCasFeatures(manifestPath, out)
    expect(n).toBe(2) // street.cvf + m1.cvf
    const street = readCvf(join(out, 'street.cvf'))
    expect(street.map((l) => l.name)).toEqual(['mild-0', 'moderate-0', 'severe-0'])
    expect(street.every((l) => l.dims.length === 1)).toBe(true)
  })

  it('cas-labels covers every (pair, method) plus ground_truth with valid labels', async () => {
    const out = join(corpusDir, 'caslab')
    const csvPath = await extractCasLabels(manifestPath, out)
    const lines = readFileSync(csvPath, 'utf-8').trim().split('\n')
    expect(lines[0]).toBe('pair_id,method,predicted_label')
    const rows = lines.slice(1).map((line) => line.split(','))
    expect(rows.length).toBe(6) // 3 ground_truth + 3 m1
    const keys = new Set(rows.map(([pairId, method]) => `${pairId}|${method}`))
    for (const id of ['mild-0', 'moderate-0', 'severe-0']) {
      expect(keys.has(`${id}|ground_truth`)).toBe(true)
      expect(keys.has(`${id}|m1`)).toBe(true)
    }
    for (const [, , label] of rows) {
      expect(LABELS).toContain(label as (typeof LABELS)[number])
    }
  })

  it('cas-labels is deterministic after freezing', async () => {
    const out1 = join(corpusDir, 'caslab-1')
    const out2 = join(corpusDir, 'caslab-2')
    const p1 = await extractCasLabels(manifestPath, out1)
    const p2 = await extractCasLabels(manifestPath, out2)
    expect(readFileSync(p1, 'utf-8')).toBe(readFileSync(p2, 'utf-8'))
  })
})
