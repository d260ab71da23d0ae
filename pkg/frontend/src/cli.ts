#!/usr/bin/env node
/**
 * cvf-extract: feature files and predicted-label CSVs for crossview-eval.
 *
 *   cvf-extract fid          --manifest M --out DIR
 *   cvf-extract lpips        --manifest M --out DIR
 *   cvf-extract cas-features --manifest M --out DIR
 *   cvf-extract cas-labels   --manifest M --out DIR [--train-manifest T] [--seed N]
 */

import { extractCasFeatures, extractCasLabels, extractFid, extractLpips } from './extract.js'

interface Args {
  command: string
  manifest: string
  out: string
  trainManifest?: string
  seed: number
}

function parseArgs(argv: string[]): Args {
  const [command, ...rest] = argv
  const flags: Record<string, string> = {}
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i]
    if (!key.startsWith('--') || i + 1 >= rest.length) {
      throw new Error(`bad argument ${key}`)
    }
    flags[key.slice(2)] = rest[i + 1]
  }
  if (!command || !flags.manifest || !flags.out) {
    throw new Error(
      'usage: cvf-extract fid|lpips|cas-features|cas-labels --manifest M --out DIR ' +
        '[--train-manifest T] [--seed N]',
    )
  }
  return {
    command,
    manifest: flags.manifest,
    out: flags.out,
    trainManifest: flags['train-manifest'],
    seed: flags.seed ? Number(flags.seed) : 0,
  }
}

async function main(): Promise<number> {
  let args: Args
  try {
    args = parseArgs(process.argv.slice(2))
  } catch (err) {
    console.error((err as Error).message)
    return 1
  }
  switch (args.command) {
    case 'fid': {
      const n = await extractFid(args.manifest, args.out)
      console.log(`wrote ${n} pooled feature files to ${args.out}`)
      return 0
    }
    case 'lpips': {
      const n = await extractLpips(args.manifest, args.out)
      console.log(`wrote ${n} layered feature files to ${args.out}`)
      return 0
    }
    case 'cas-features': {
      const n = await extractCasFeatures(args.manifest, args.out)
      console.log(`wrote ${n} feature-set files to ${args.out}`)
      return 0
    }
    case 'cas-labels': {
      const path = await extractCasLabels(args.manifest, args.out, args.trainManifest, args.seed)
      console.log(`wrote ${path}`)
      return 0
    }
    default:
      console.error(`unknown command ${args.command}`)
      return 1
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err instanceof Error ? err.message : err)
    process.exit(1)
  },
)
