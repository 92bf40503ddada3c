import * as fs from 'fs'
import * as path from 'path'

/** One image to embed: path on disk plus its integer identity label. */
export interface ManifestEntry {
  imagePath: string
  identity: number
}

/**
 * Parse a `path<TAB>identity` manifest. Relative image paths are resolved
 * against the manifest's own directory. Blank lines and `#` comments are
 * skipped.
 */
export function readManifest(manifestPath: string): ManifestEntry[] {
  const text = fs.readFileSync(manifestPath, 'utf-8')
  const base = path.dirname(path.resolve(manifestPath))
  const entries: ManifestEntry[] = []
  const lines = text.split('\n')
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim()
    if (!line || line.startsWith('#')) continue
    const tab = line.indexOf('\t')
    if (tab < 0) {
      throw new Error(`${manifestPath}:${i + 1}: expected "path<TAB>identity"`)
    }
    const imagePath = line.slice(0, tab).trim()
    const identityText = line.slice(tab + 1).trim()
    const identity = Number(identityText)
    if (!Number.isInteger(identity) || identity < 0) {
      throw new Error(`${manifestPath}:${i + 1}: identity ${JSON.stringify(identityText)} is not a non-negative integer`)
    }
    entries.push({ imagePath: path.resolve(base, imagePath), identity })
  }
  if (entries.length === 0) {
    throw new Error(`${manifestPath}: no entries`)
  }
  return entries
}

/** Members and non-members must not share images. */
export function checkDisjoint(members: ManifestEntry[], nonmembers: ManifestEntry[]): void {
  const seen = new Set(members.map(e => e.imagePath))
  for (const e of nonmembers) {
    if (seen.has(e.imagePath)) {
      throw new Error(`image listed in both manifests: ${e.imagePath}`)
    }
  }
}
