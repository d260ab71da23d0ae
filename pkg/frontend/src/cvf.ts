/**
 * CVF1 binary feature-file writer/reader (shared contract with the
 * crossview-eval reader).
 *
 * Little-endian layout: magic "CVF1", u32 flags (0), u32 layer count;
 * per layer: u16 name length + utf-8 name, u8 ndim (1 or 3), ndim x u32
 * dims ((d,) or (c,h,w)), u8 weight flag, prod(dims) float32 data, then
 * (if flagged) dims[0] float32 per-channel weights.
 */

import { readFileSync, writeFileSync } from 'fs'

export interface CvfLayer {
  name: string
  /** (d,) or (c, h, w) */
  dims: number[]
  /** length = prod(dims); 3-D data is channel-major (CHW) */
  data: Float32Array
  /** per-channel weights, length = dims[0] */
  weights?: Float32Array
}

const MAGIC = 'CVF1'

function prod(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1)
}

export function encodeCvf(layers: CvfLayer[]): Buffer {
  const names = new Set<string>()
  const chunks: Buffer[] = []
  const head = Buffer.alloc(12)
  head.write(MAGIC, 0, 'ascii')
  head.writeUInt32LE(0, 4)
  head.writeUInt32LE(layers.length, 8)
  chunks.push(head)
  for (const layer of layers) {
    if (names.has(layer.name)) {
      throw new Error(`duplicate layer name ${layer.name}`)
    }
    names.add(layer.name)
    if (layer.dims.length !== 1 && layer.dims.length !== 3) {
      throw new Error(`layer ${layer.name}: ndim must be 1 or 3, got ${layer.dims.length}`)
    }
    if (layer.data.length !== prod(layer.dims)) {
      throw new Error(
        `layer ${layer.name}: data length ${layer.data.length} != prod(dims) ${prod(layer.dims)}`,
      )
    }
    if (layer.weights && layer.weights.length !== layer.dims[0]) {
      throw new Error(`layer ${layer.name}: weights length ${layer.weights.length} != ${layer.dims[0]}`)
    }
    const nameBytes = Buffer.from(layer.name, 'utf-8')
    const header = Buffer.alloc(2 + nameBytes.length + 1 + 4 * layer.dims.length + 1)
    let at = 0
    header.writeUInt16LE(nameBytes.length, at)
    at += 2
    nameBytes.copy(header, at)
    at += nameBytes.length
    header.writeUInt8(layer.dims.length, at)
    at += 1
    for (const dim of layer.dims) {
      header.writeUInt32LE(dim, at)
      at += 4
    }
    header.writeUInt8(layer.weights ? 1 : 0, at)
    chunks.push(header)
    chunks.push(float32ToBuffer(layer.data))
    if (layer.weights) {
      chunks.push(float32ToBuffer(layer.weights))
    }
  }
  return Buffer.concat(chunks)
}

export function decodeCvf(buf: Buffer): CvfLayer[] {
  let at = 0
  const take = (n: number): Buffer => {
    if (at + n > buf.length) {
      throw new Error(`truncated CVF file at byte ${at} (needed ${n} more)`)
    }
    const piece = buf.subarray(at, at + n)
    at += n
    return piece
  }
  if (take(4).toString('ascii') !== MAGIC) {
    throw new Error('bad magic (not a CVF1 file)')
  }
  const flags = take(4).readUInt32LE(0)
  if (flags !== 0) {
    throw new Error(`unsupported flags ${flags}`)
  }
  const count = take(4).readUInt32LE(0)
  const layers: CvfLayer[] = []
  for (let i = 0; i < count; i++) {
    const nameLen = take(2).readUInt16LE(0)
    const name = take(nameLen).toString('utf-8')
    const ndim = take(1).readUInt8(0)
    if (ndim !== 1 && ndim !== 3) {
      throw new Error(`layer ${name}: invalid ndim ${ndim}`)
    }
    const dims: number[] = []
    for (let d = 0; d < ndim; d++) {
      dims.push(take(4).readUInt32LE(0))
    }
    const hasWeights = take(1).readUInt8(0)
    const data = bufferToFloat32(take(4 * prod(dims)))
    const weights = hasWeights ? bufferToFloat32(take(4 * dims[0])) : undefined
    layers.push({ name, dims, data, weights })
  }
  if (at !== buf.length) {
    throw new Error(`${buf.length - at} trailing bytes after last layer`)
  }
  return layers
}

export function writeCvf(path: string, layers: CvfLayer[]): void {
  writeFileSync(path, encodeCvf(layers))
}

export function readCvf(path: string): CvfLayer[] {
  return decodeCvf(readFileSync(path))
}

function float32ToBuffer(arr: Float32Array): Buffer {
  const buf = Buffer.alloc(arr.length * 4)
  for (let i = 0; i < arr.length; i++) {
    buf.writeFloatLE(arr[i], i * 4)
  }
  return buf
}

function bufferToFloat32(buf: Buffer): Float32Array {
  const out = new Float32Array(buf.length / 4)
  for (let i = 0; i < out.length; i++) {
    out[i] = buf.readFloatLE(i * 4)
  }
  return out
}
