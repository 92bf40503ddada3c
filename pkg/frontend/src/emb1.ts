/**
 * EMB1 binary container: the embedding interchange format the attack
 * toolkit consumes.
 *
 * Layout: magic "EMB1", u16 version=1, u16 flags (bit0 identity, bit1
 * membership, bit2 split), u64 row count, u32 dimension, then n*K float32
 * LE vectors row-major, then the flagged sections: n int32 identities
 * (-1 absent), n uint8 membership (255 absent), n uint8 split tags.
 */

export const EMB1_MAGIC = 0x31424d45 // "EMB1" little-endian
export const EMB1_VERSION = 1

export const FLAG_IDENTITY = 0x1
export const FLAG_MEMBERSHIP = 0x2
export const FLAG_SPLIT = 0x4

export interface Emb1Data {
  dim: number
  /** row-major, length n*dim */
  vectors: Float32Array
  identities?: Int32Array
  membership?: Uint8Array
  splits?: Uint8Array
}

export function rowCount(data: Emb1Data): number {
  if (data.dim <= 0 || data.vectors.length % data.dim !== 0) {
    throw new Error(`vector buffer length ${data.vectors.length} is not a multiple of dim ${data.dim}`)
  }
  return data.vectors.length / data.dim
}

export function encodeEmb1(data: Emb1Data): Buffer {
  const n = rowCount(data)
  for (const [name, arr] of [
    ['identities', data.identities],
    ['membership', data.membership],
    ['splits', data.splits],
  ] as const) {
    if (arr && arr.length !== n) {
      throw new Error(`${name} has length ${arr.length}, expected ${n}`)
    }
  }
  let flags = 0
  if (data.identities) flags |= FLAG_IDENTITY
  if (data.membership) flags |= FLAG_MEMBERSHIP
  if (data.splits) flags |= FLAG_SPLIT

  let size = 4 + 2 + 2 + 8 + 4 + n * data.dim * 4
  if (data.identities) size += n * 4
  if (data.membership) size += n
  if (data.splits) size += n

  const buf = Buffer.alloc(size)
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  let off = 0
  view.setUint32(off, EMB1_MAGIC, true)
  off += 4
  view.setUint16(off, EMB1_VERSION, true)
  off += 2
  view.setUint16(off, flags, true)
  off += 2
  view.setBigUint64(off, BigInt(n), true)
  off += 8
  view.setUint32(off, data.dim, true)
  off += 4
  for (let i = 0; i < data.vectors.length; i++) {
    view.setFloat32(off, data.vectors[i], true)
    off += 4
  }
  if (data.identities) {
    for (let i = 0; i < n; i++) {
      view.setInt32(off, data.identities[i], true)
      off += 4
    }
  }
  if (data.membership) {
    buf.set(data.membership, off)
    off += n
  }
  if (data.splits) {
    buf.set(data.splits, off)
    off += n
  }
  return buf
}

export function decodeEmb1(buf: Buffer): Emb1Data {
  if (buf.length < 20) throw new Error(`truncated EMB1 header (${buf.length} bytes)`)
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  if (view.getUint32(0, true) !== EMB1_MAGIC) throw new Error('bad EMB1 magic')
  const version = view.getUint16(4, true)
  if (version !== EMB1_VERSION) throw new Error(`unsupported EMB1 version ${version}`)
  const flags = view.getUint16(6, true)
  const n = Number(view.getBigUint64(8, true))
  const dim = view.getUint32(16, true)

  let expected = 20 + n * dim * 4
  if (flags & FLAG_IDENTITY) expected += n * 4
  if (flags & FLAG_MEMBERSHIP) expected += n
  if (flags & FLAG_SPLIT) expected += n
  if (buf.length !== expected) {
    throw new Error(`EMB1 size ${buf.length} does not match header (expected ${expected})`)
  }

  let off = 20
  const vectors = new Float32Array(n * dim)
  for (let i = 0; i < vectors.length; i++) {
    vectors[i] = view.getFloat32(off, true)
    off += 4
  }
  const out: Emb1Data = { dim, vectors }
  if (flags & FLAG_IDENTITY) {
    const identities = new Int32Array(n)
    for (let i = 0; i < n; i++) {
      identities[i] = view.getInt32(off, true)
      off += 4
    }
    out.identities = identities
  }
  if (flags & FLAG_MEMBERSHIP) {
    out.membership = new Uint8Array(buf.subarray(off, off + n))
    off += n
  }
  if (flags & FLAG_SPLIT) {
    out.splits = new Uint8Array(buf.subarray(off, off + n))
    off += n
  }
  return out
}
