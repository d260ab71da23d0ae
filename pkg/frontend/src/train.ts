/**
 * Severity-head training for the cas-labels command: a softmax head over
 * the backbone's pooled features, optimized with Adam (lr 1e-4, batch 32,
 * 10 epochs) on the real street views of the training manifest, then
 * frozen for prediction. Mini-batch order comes from a seeded shuffle, so
 * repeated runs emit identical CSVs.
 */

import * as tf from '@tensorflow/tfjs'

import { extractFeatures, POOLED_DIM } from './backbone.js'
import { loadPng } from './image.js'
import type { Manifest, Severity } from './manifest.js'
import { SEVERITY_INDEX } from './manifest.js'
import { mulberry32, shuffledIndices } from './rng.js'

export const EPOCHS = 10
export const BATCH_SIZE = 32
export const LEARNING_RATE = 1e-4

const SEVERITY_NAMES: Severity[] = ['mild', 'moderate', 'severe']

export interface PredictedRow {
  pairId: string
  method: string
  label: Severity
}

async function pooledMatrix(paths: string[]): Promise<tf.Tensor2D> {
  const rows: Float32Array[] = []
  for (const path of paths) {
    rows.push((await extractFeatures(loadPng(path))).pooled)
  }
  const flat = new Float32Array(rows.length * POOLED_DIM)
  rows.forEach((row, i) => flat.set(row, i * POOLED_DIM))
  return tf.tensor2d(flat, [rows.length, POOLED_DIM])
}

export async function trainAndPredict(
  trainManifest: Manifest,
  target: Manifest,
  seed = 0,
): Promise<PredictedRow[]> {
  const trainX = await pooledMatrix(trainManifest.pairs.map((p) => p.street))
  const trainY = tf.oneHot(
    tf.tensor1d(trainManifest.pairs.map((p) => SEVERITY_INDEX[p.label]), 'int32'),
    3,
  ) as tf.Tensor2D

  const weights = tf.variable(tf.zeros([POOLED_DIM, 3])) as tf.Variable<tf.Rank.R2>
  const bias = tf.variable(tf.zeros([3])) as tf.Variable<tf.Rank.R1>
  const logitsOf = (x: tf.Tensor2D) => tf.add(tf.matMul(x, weights), bias) as tf.Tensor2D

  const optimizer = tf.train.adam(LEARNING_RATE)
  const rand = mulberry32(seed)
  const n = trainManifest.pairs.length
  for (let epoch = 0; epoch < EPOCHS; epoch++) {
    const order = shuffledIndices(n, rand)
    for (let start = 0; start < n; start += BATCH_SIZE) {
      const idx = order.slice(start, start + BATCH_SIZE)
      optimizer.minimize(() =>
        tf.tidy(() => {
          const x = tf.gather(trainX, idx)
          const y = tf.gather(trainY, idx)
          return tf.losses.softmaxCrossEntropy(y, logitsOf(x)) as tf.Scalar
        }),
      )
    }
  }

  const rows: PredictedRow[] = []
  const predict = async (paths: string[]): Promise<number[]> => {
    const x = await pooledMatrix(paths)
    const picks = tf.tidy(() => tf.argMax(logitsOf(x), 1).dataSync())
    x.dispose()
    return Array.from(picks)
  }

  const groundTruth = await predict(target.pairs.map((p) => p.street))
  target.pairs.forEach((pair, i) => {
    rows.push({ pairId: pair.id, method: 'ground_truth', label: SEVERITY_NAMES[groundTruth[i]] })
  })
  for (const method of target.methods) {
    const pairs = target.pairs.filter((p) => method in p.generated)
    const picks = await predict(pairs.map((p) => p.generated[method]))
    pairs.forEach((pair, i) => {
      rows.push({ pairId: pair.id, method, label: SEVERITY_NAMES[picks[i]] })
    })
  }

  trainX.dispose()
  trainY.dispose()
  weights.dispose()
  bias.dispose()
  return rows
}
