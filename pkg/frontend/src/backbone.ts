/**
 * Deterministic convolutional backbone.
 *
 * Pretrained weights are not fetchable in the build environment, so the
 * documented convention is a fixed-seed backbone: three 3x3 conv stages
 * (3 -> 8 -> 16 -> 32 channels, ReLU, 2x2 average pooling between stages)
 * over a canonical 64x64 RGB input, with Xavier-uniform weights drawn
 * from mulberry32(0xc0ffee) in a fixed order. The pooled feature vector
 * is the concatenation of each stage's global average pool (d = 56); the
 * stage activations are the layered LPIPS features, carrying uniform 1/c
 * per-channel weight blocks. Identical images always map to identical
 * bytes, and the extractor is stable across runs and machines for a
 * pinned tfjs version.
 */

import * as tf from '@tensorflow/tfjs'

import type { CvfLayer } from './cvf.js'
import type { RgbImage } from './image.js'
import { mulberry32 } from './rng.js'

export const INPUT_SIZE = 64
export const WEIGHT_SEED = 0xc0ffee
export const STAGE_CHANNELS = [8, 16, 32]
export const POOLED_DIM = STAGE_CHANNELS.reduce((a, b) => a + b, 0)

interface Stage {
  kernel: tf.Tensor4D
  bias: tf.Tensor1D
}

let stages: Stage[] | null = null

async function ensureBackend(): Promise<void> {
  await tf.ready()
  if (tf.getBackend() !== 'cpu') {
    await tf.setBackend('cpu')
  }
}

function buildStages(): Stage[] {
  const rand = mulberry32(WEIGHT_SEED)
  const built: Stage[] = []
  let inChannels = 3
  for (const outChannels of STAGE_CHANNELS) {
    const fanIn = 3 * 3 * inChannels
    const fanOut = 3 * 3 * outChannels
    const limit = Math.sqrt(6 / (fanIn + fanOut))
    const kernelValues = new Float32Array(3 * 3 * inChannels * outChannels)
    for (let i = 0; i < kernelValues.length; i++) {
      kernelValues[i] = (rand() * 2 - 1) * limit
    }
    const biasValues = new Float32Array(outChannels)
    for (let i = 0; i < biasValues.length; i++) {
      biasValues[i] = (rand() * 2 - 1) * 0.05
    }
    built.push({
      kernel: tf.tensor4d(kernelValues, [3, 3, inChannels, outChannels]),
      bias: tf.tensor1d(biasValues),
    })
    inChannels = outChannels
  }
  return built
}

export interface BackboneFeatures {
  /** concat of per-stage global average pools, length POOLED_DIM */
  pooled: Float32Array
  /** per-stage post-ReLU activations in CHW order */
  layers: { name: string; channels: number; height: number; width: number; data: Float32Array }[]
}

export async function extractFeatures(image: RgbImage): Promise<BackboneFeatures> {
  await ensureBackend()
  if (stages === null) {
    stages = buildStages()
  }
  const active = stages
  const layers: BackboneFeatures['layers'] = []
  const pools: Float32Array[] = []
  const activations: tf.Tensor3D[] = []
  tf.tidy(() => {
    let x = tf.tensor3d(image.data, [image.height, image.width, 3])
    if (image.height !== INPUT_SIZE || image.width !== INPUT_SIZE) {
      x = tf.image.resizeBilinear(x, [INPUT_SIZE, INPUT_SIZE])
    }
    for (let i = 0; i < active.length; i++) {
      const conv = tf.relu(
        tf.add(tf.conv2d(x, active[i].kernel, 1, 'same'), active[i].bias),
      ) as tf.Tensor3D
      activations.push(tf.keep(tf.transpose(conv, [2, 0, 1])) as tf.Tensor3D)
      pools.push(tf.mean(conv, [0, 1]).dataSync() as Float32Array)
      x = tf.avgPool(conv, 2, 2, 'valid')
    }
  })
  for (let i = 0; i < activations.length; i++) {
    const [channels, height, width] = activations[i].shape
    layers.push({
      name: `conv${i + 1}`,
      channels,
      height,
      width,
      data: activations[i].dataSync() as Float32Array,
    })
    activations[i].dispose()
  }
  const pooled = new Float32Array(POOLED_DIM)
  let at = 0
  for (const pool of pools) {
    pooled.set(pool, at)
    at += pool.length
  }
  return { pooled, layers }
}

export function pooledLayer(features: BackboneFeatures, name = 'pool'): CvfLayer {
  return { name, dims: [features.pooled.length], data: features.pooled }
}

export function lpipsLayers(features: BackboneFeatures): CvfLayer[] {
  return features.layers.map((layer) => ({
    name: layer.name,
    dims: [layer.channels, layer.height, layer.width],
    data: layer.data,
    weights: new Float32Array(layer.channels).fill(1 / layer.channels),
  }))
}
