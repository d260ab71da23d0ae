/** Loader for the harness manifest.json (paths resolved against its directory). */

import { readFileSync } from 'fs'
import { dirname, resolve } from 'path'

export type Severity = 'mild' | 'moderate' | 'severe'

export const SEVERITY_INDEX: Record<Severity, number> = { mild: 0, moderate: 1, severe: 2 }

export interface SamplePair {
  id: string
  satellite: string
  street: string
  label: Severity
  generated: Record<string, string>
}

export interface Manifest {
  methods: string[]
  pairs: SamplePair[]
}

export function loadManifest(path: string): Manifest {
  const raw = JSON.parse(readFileSync(path, 'utf-8'))
  if (!Array.isArray(raw.methods) || !Array.isArray(raw.pairs)) {
    throw new Error(`${path}: manifest needs "methods" and "pairs" arrays`)
  }
  const base = dirname(path)
  const seen = new Set<string>()
  const pairs: SamplePair[] = raw.pairs.map((entry: any) => {
    if (!entry.id || seen.has(entry.id)) {
      throw new Error(`${path}: missing or duplicate pair id ${entry.id}`)
    }
    seen.add(entry.id)
    if (!(entry.label in SEVERITY_INDEX)) {
      throw new Error(`${path}: pair ${entry.id} has unknown label ${entry.label}`)
    }
    const generated: Record<string, string> = {}
    for (const [method, rel] of Object.entries(entry.generated ?? {})) {
      generated[method] = resolve(base, rel as string)
    }
    return {
      id: entry.id,
      satellite: resolve(base, entry.satellite),
      street: resolve(base, entry.street),
      label: entry.label as Severity,
      generated,
    }
  })
  return { methods: raw.methods, pairs }
}
