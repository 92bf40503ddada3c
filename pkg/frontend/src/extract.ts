import * as fs from 'fs'
import * as tf from '@tensorflow/tfjs'

import { Emb1Data, encodeEmb1 } from './emb1'
import { decodeNetpbm } from './image'
import { ManifestEntry, checkDisjoint, readManifest } from './manifest'
import { loadLayersModelFromDir } from './modelio'

export interface ExtractJob {
  checkpointDir: string
  membersManifest: string
  nonmembersManifest: string
  outputPath: string
  batchSize?: number
  /** name of the layer whose output is the embedding; default: the layer before the classifier head */
  featureLayer?: string
  l2Normalize?: boolean
}

export interface ExtractResult {
  rows: number
  dim: number
  members: number
  nonmembers: number
}

/** The embedding submodel: everything up to (and including) the feature layer. */
export function featureModel(model: tf.LayersModel, featureLayer?: string): tf.LayersModel {
  let layer: tf.layers.Layer
  if (featureLayer) {
    try {
      layer = model.getLayer(featureLayer)
    } catch {
      const names = model.layers.map(l => l.name).join(', ')
      throw new Error(`checkpoint has no layer named ${JSON.stringify(featureLayer)} (layers: ${names})`)
    }
  } else {
    if (model.layers.length < 2) {
      throw new Error('checkpoint has no layer before the classifier head')
    }
    layer = model.layers[model.layers.length - 2]
  }
  return tf.model({ inputs: model.inputs, outputs: layer.output as tf.SymbolicTensor })
}

function loadPixels(entry: ManifestEntry, shape: number[]): Float32Array {
  const [height, width, channels] = shape
  const img = decodeNetpbm(entry.imagePath)
  if (img.height !== height || img.width !== width || img.channels !== channels) {
    throw new Error(
      `${entry.imagePath}: image is ${img.height}x${img.width}x${img.channels}, ` +
        `checkpoint expects ${height}x${width}x${channels}`,
    )
  }
  return img.data
}

export async function extract(job: ExtractJob): Promise<ExtractResult> {
  const members = readManifest(job.membersManifest)
  const nonmembers = readManifest(job.nonmembersManifest)
  checkDisjoint(members, nonmembers)

  const model = await loadLayersModelFromDir(job.checkpointDir)
  const embedder = featureModel(model, job.featureLayer)
  const inputShape = embedder.inputs[0].shape.slice(1).map(d => (d === null ? -1 : d)) as number[]
  if (inputShape.length !== 3 || inputShape.some(d => d <= 0)) {
    throw new Error(`checkpoint input shape [${inputShape}] is not a fixed HxWxC image`)
  }
  const outShape = embedder.outputs[0].shape
  if (outShape.length !== 2) {
    throw new Error(`feature layer output shape [${outShape}] is not a flat vector; pick another --feature-layer`)
  }
  const dim = outShape[1] as number

  const entries = [...members, ...nonmembers]
  const batchSize = job.batchSize && job.batchSize > 0 ? job.batchSize : 32
  const vectors = new Float32Array(entries.length * dim)

  for (let start = 0; start < entries.length; start += batchSize) {
    const batch = entries.slice(start, start + batchSize)
    const pixels = new Float32Array(batch.length * inputShape[0] * inputShape[1] * inputShape[2])
    batch.forEach((entry, i) => {
      pixels.set(loadPixels(entry, inputShape), i * inputShape[0] * inputShape[1] * inputShape[2])
    })
    const features = tf.tidy(() => {
      const input = tf.tensor4d(pixels, [batch.length, inputShape[0], inputShape[1], inputShape[2]])
      let out = embedder.predict(input, { batchSize: batch.length }) as tf.Tensor2D
      if (job.l2Normalize) {
        out = tf.div(out, tf.norm(out, 'euclidean', 1, true))
      }
      return out
    })
    const data = await features.data()
    vectors.set(data as Float32Array, start * dim)
    features.dispose()
  }

  const identities = new Int32Array(entries.map(e => e.identity))
  const membership = new Uint8Array(entries.length)
  membership.fill(1, 0, members.length)
  membership.fill(0, members.length)

  const container: Emb1Data = { dim, vectors, identities, membership }
  fs.writeFileSync(job.outputPath, encodeEmb1(container))
  return {
    rows: entries.length,
    dim,
    members: members.length,
    nonmembers: nonmembers.length,
  }
}
