#!/usr/bin/env node
import { extract } from './extract'

const USAGE = `usage: emb1-extract --checkpoint <dir> --members <manifest> --nonmembers <manifest> --output <file.emb1>
                    [--batch-size N] [--feature-layer NAME] [--l2-normalize]

Manifests hold one "path<TAB>identity" line per image (PGM/PPM, 8-bit).
Members come from the target model's training set, non-members do not; the
output is an EMB1 container with vectors, identities, and membership bits.`

function parseArgs(argv: string[]) {
  const opts: Record<string, string | boolean> = {}
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (!arg.startsWith('--')) throw new Error(`unexpected argument ${arg}`)
    const key = arg.slice(2)
    if (key === 'l2-normalize') {
      opts[key] = true
    } else {
      const value = argv[++i]
      if (value === undefined) throw new Error(`missing value for --${key}`)
      opts[key] = value
    }
  }
  return opts
}

async function main(): Promise<number> {
  let opts: Record<string, string | boolean>
  try {
    opts = parseArgs(process.argv.slice(2))
  } catch (err) {
    console.error(`emb1-extract: ${(err as Error).message}`)
    console.error(USAGE)
    return 1
  }
  for (const required of ['checkpoint', 'members', 'nonmembers', 'output']) {
    if (!opts[required]) {
      console.error(`emb1-extract: missing --${required}`)
      console.error(USAGE)
      return 1
    }
  }
  try {
    const result = await extract({
      checkpointDir: String(opts['checkpoint']),
      membersManifest: String(opts['members']),
      nonmembersManifest: String(opts['nonmembers']),
      outputPath: String(opts['output']),
      batchSize: opts['batch-size'] ? Number(opts['batch-size']) : undefined,
      featureLayer: opts['feature-layer'] ? String(opts['feature-layer']) : undefined,
      l2Normalize: Boolean(opts['l2-normalize']),
    })
    console.log(
      `wrote ${opts['output']}: ${result.rows} rows (dim ${result.dim}, ` +
        `${result.members} members, ${result.nonmembers} non-members)`,
    )
    return 0
  } catch (err) {
    console.error(`emb1-extract: ${(err as Error).message}`)
    return 2
  }
}

main().then(code => {
  process.exitCode = code
})
