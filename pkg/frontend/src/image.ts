/** PNG decoding to [0,1] RGB float tensors (8-bit values / 255). */

import { readFileSync } from 'fs'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** HWC, RGB, [0,1] */
  data: Float32Array
}

export function loadPng(path: string): RgbImage {
  const png = PNG.sync.read(readFileSync(path))
  const { width, height, data } = png
  const out = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    out[i * 3] = data[i * 4] / 255
    out[i * 3 + 1] = data[i * 4 + 1] / 255
    out[i * 3 + 2] = data[i * 4 + 2] / 255
  }
  return { width, height, data: out }
}
