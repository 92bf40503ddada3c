import * as fs from 'fs'

/** Decoded image: pixel values scaled to [0, 1], shape [height, width, channels]. */
export interface DecodedImage {
  width: number
  height: number
  channels: number
  /** row-major, length height*width*channels */
  data: Float32Array
}

/**
 * Decode binary PGM (P5, one channel) or PPM (P6, three channels) with
 * 8-bit samples. These cover the toy fixtures and any corpus converted with
 * standard tools; no native codecs are needed.
 */
export function decodeNetpbm(filePath: string): DecodedImage {
  let buf: Buffer
  try {
    buf = fs.readFileSync(filePath)
  } catch (err) {
    throw new Error(`unreadable image ${filePath}: ${(err as Error).message}`)
  }
  const magic = buf.subarray(0, 2).toString('ascii')
  if (magic !== 'P5' && magic !== 'P6') {
    throw new Error(`${filePath}: unsupported image magic ${JSON.stringify(magic)} (need binary PGM/PPM)`)
  }
  const channels = magic === 'P5' ? 1 : 3

  // header tokens: width, height, maxval; '#' starts a comment to end of line
  let pos = 2
  const tokens: number[] = []
  while (tokens.length < 3 && pos < buf.length) {
    const ch = buf[pos]
    if (ch === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
    } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      pos++
    } else {
      let start = pos
      while (pos < buf.length && buf[pos] > 0x20) pos++
      const token = buf.subarray(start, pos).toString('ascii')
      const value = Number(token)
      if (!Number.isInteger(value)) throw new Error(`${filePath}: bad header token ${token}`)
      tokens.push(value)
    }
  }
  if (tokens.length < 3) throw new Error(`${filePath}: truncated header`)
  const [width, height, maxval] = tokens
  if (maxval !== 255) throw new Error(`${filePath}: only maxval 255 supported, got ${maxval}`)
  pos++ // single whitespace byte after maxval

  const expected = width * height * channels
  if (buf.length - pos < expected) {
    throw new Error(`${filePath}: pixel data truncated (${buf.length - pos} of ${expected} bytes)`)
  }
  const data = new Float32Array(expected)
  for (let i = 0; i < expected; i++) {
    data[i] = buf[pos + i] / 255
  }
  return { width, height, channels, data }
}

/** Encode a single-channel PGM; used by tests to build fixtures. */
export function encodePgm(width: number, height: number, pixels: Uint8Array): Buffer {
  if (pixels.length !== width * height) {
    throw new Error(`pixel buffer length ${pixels.length} != ${width}x${height}`)
  }
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, 'ascii')
  return Buffer.concat([header, Buffer.from(pixels)])
}
