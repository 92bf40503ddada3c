import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

/**
 * File-system load/save for TensorFlow.js layers models without the native
 * tfjs-node package: a directory holding model.json plus the weight shards
 * its weightsManifest names.
 */

export async function loadLayersModelFromDir(dir: string): Promise<tf.LayersModel> {
  const modelJsonPath = path.join(dir, 'model.json')
  if (!fs.existsSync(modelJsonPath)) {
    throw new Error(`checkpoint ${dir} has no model.json`)
  }
  const modelJson = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'))
  const manifest = modelJson.weightsManifest ?? []
  const weightSpecs: tf.io.WeightsManifestEntry[] = []
  const shards: Buffer[] = []
  for (const group of manifest) {
    weightSpecs.push(...group.weights)
    for (const shardPath of group.paths) {
      shards.push(fs.readFileSync(path.join(dir, shardPath)))
    }
  }
  const weightData = Buffer.concat(shards)
  const handler = tf.io.fromMemory({
    modelTopology: modelJson.modelTopology,
    weightSpecs,
    weightData: weightData.buffer.slice(
      weightData.byteOffset,
      weightData.byteOffset + weightData.byteLength,
    ),
  })
  try {
    return await tf.loadLayersModel(handler)
  } catch (err) {
    throw new Error(`failed to load checkpoint ${dir}: ${(err as Error).message}`)
  }
}

export async function saveLayersModelToDir(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true })
  await model.save(
    tf.io.withSaveHandler(async artifacts => {
      const weightData = artifacts.weightData as ArrayBuffer
      fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(weightData))
      const modelJson = {
        modelTopology: artifacts.modelTopology,
        format: 'layers-model',
        generatedBy: 'emb1-extractor',
        convertedBy: null,
        weightsManifest: [
          {
            paths: ['weights.bin'],
            weights: artifacts.weightSpecs,
          },
        ],
      }
      fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(modelJson))
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON',
        },
      }
    }),
  )
}
