/**
 * Threshold-mode segmentation: global Otsu threshold, 8-connected flood fill
 * from each point prompt, additive dense prompt, +-10 logits average-pooled
 * 4x4. Mirrors the engine's built-in oracle backend exactly, including the
 * Otsu tie rule (smallest maximizing threshold) and the single-bin case.
 */

import { Channel } from "./codec";

export function histogram256(gray: Uint8Array): Float64Array {
  const hist = new Float64Array(256);
  for (let i = 0; i < gray.length; i++) hist[gray[i]]++;
  return hist;
}

export function otsuThreshold(hist: Float64Array): number {
  let total = 0;
  let nonzero = -1;
  let nonzeroCount = 0;
  for (let i = 0; i < 256; i++) {
    total += hist[i];
    if (hist[i] > 0) {
      nonzeroCount++;
      if (nonzero < 0) nonzero = i;
    }
  }
  if (total <= 0) throw new Error("histogram is empty");
  if (nonzeroCount === 1) return nonzero;
  let sumAll = 0;
  for (let i = 0; i < 256; i++) sumAll += i * hist[i];
  let bestT = 0;
  let bestSigma = -1;
  let w0 = 0;
  let sum0 = 0;
  for (let t = 0; t < 256; t++) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const w1 = total - w0;
    const mu0 = w0 > 0 ? sum0 / w0 : 0;
    const mu1 = w1 > 0 ? (sumAll - sum0) / w1 : 0;
    const d = mu0 - mu1;
    const sigma = w0 * w1 * (d * d);
    if (sigma > bestSigma) {
      bestSigma = sigma;
      bestT = t;
    }
  }
  return bestT;
}

export function binarize(gray: Uint8Array, threshold: number): Uint8Array {
  const out = new Uint8Array(gray.length);
  for (let i = 0; i < gray.length; i++) out[i] = gray[i] > threshold ? 1 : 0;
  return out;
}

/** 8-connected component of `binary` containing (x, y); empty when (x, y) is background. */
export function floodFrom(binary: Uint8Array, w: number, h: number, x: number, y: number): Uint8Array {
  const out = new Uint8Array(binary.length);
  const start = y * w + x;
  if (!binary[start]) return out;
  const stack = [start];
  out[start] = 1;
  while (stack.length > 0) {
    const idx = stack.pop()!;
    const cy = Math.floor(idx / w);
    const cx = idx - cy * w;
    for (let dy = -1; dy <= 1; dy++) {
      for (let dx = -1; dx <= 1; dx++) {
        if (dx === 0 && dy === 0) continue;
        const nx = cx + dx;
        const ny = cy + dy;
        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
        const nidx = ny * w + nx;
        if (binary[nidx] && !out[nidx]) {
          out[nidx] = 1;
          stack.push(nidx);
        }
      }
    }
  }
  return out;
}

export function poolLogits(mask: Uint8Array, w: number, h: number): Float32Array {
  const ow = w >> 2;
  const oh = h >> 2;
  const out = new Float32Array(ow * oh);
  for (let by = 0; by < oh; by++) {
    for (let bx = 0; bx < ow; bx++) {
      let inside = 0;
      for (let dy = 0; dy < 4; dy++) {
        const row = (by * 4 + dy) * w + bx * 4;
        inside += mask[row] + mask[row + 1] + mask[row + 2] + mask[row + 3];
      }
      // mean of 16 samples at +-10: exact multiples of 0.25
      out[by * ow + bx] = Math.fround((inside * 10 - (16 - inside) * 10) / 16);
    }
  }
  return out;
}

function orUnion(target: Uint8Array, other: Uint8Array): void {
  for (let i = 0; i < target.length; i++) {
    if (other[i]) target[i] = 1;
  }
}

export interface ThresholdOptions {
  multimask: boolean;
}

export function thresholdSegment(
  gray: Uint8Array,
  w: number,
  h: number,
  points: Array<[number, number]>,
  dense: Uint8Array | null,
  options: ThresholdOptions,
): Channel[] {
  const binary = binarize(gray, otsuThreshold(histogram256(gray)));
  const component = new Uint8Array(gray.length);
  for (const [x, y] of points) {
    orUnion(component, floodFrom(binary, w, h, x, y));
  }
  if (dense) {
    orUnion(component, dense);
  }
  const channels: Channel[] = [{ mask: component, iou: 1.0, logits: poolLogits(component, w, h) }];
  if (options.multimask) {
    // coarser granularities: the proposal with its dense context, then the
    // full binarized field
    const withDense = component.slice();
    if (dense) orUnion(withDense, dense);
    channels.push({ mask: withDense, iou: 0.9, logits: poolLogits(withDense, w, h) });
    channels.push({ mask: binary.slice(), iou: 0.8, logits: poolLogits(binary, w, h) });
  }
  return channels;
}

export function echoSegment(
  w: number,
  h: number,
  dense: Uint8Array | null,
): Channel[] {
  const mask = dense ? Uint8Array.from(dense, (v) => (v ? 1 : 0)) : new Uint8Array(w * h);
  return [{ mask, iou: 1.0, logits: poolLogits(mask, w, h) }];
}
