/**
 * JSON payload codec for the wire protocol. Images arrive as base64 of
 * w*h*3 interleaved RGB bytes (row-major); masks as w*h bytes of 0/1; logits
 * leave as (w/4)*(h/4) little-endian float32.
 */

export interface WireRequest {
  id: number;
  w: number;
  h: number;
  /** Gray values of channel 0, length w*h, row-major. */
  gray: Uint8Array;
  points: Array<[number, number]>;
  dense: Uint8Array | null;
}

export interface Channel {
  mask: Uint8Array; // 0/1, length w*h
  iou: number;
  logits: Float32Array; // (w/4)*(h/4)
}

export class CodecError extends Error {}

export function decodeRequest(payload: Buffer): WireRequest {
  let doc: any;
  try {
    doc = JSON.parse(payload.toString("utf-8"));
  } catch (err) {
    throw new CodecError(`payload is not valid JSON: ${err}`);
  }
  const id = Number(doc.id ?? -1);
  const w = Number(doc.w);
  const h = Number(doc.h);
  if (!Number.isInteger(w) || !Number.isInteger(h) || w <= 0 || h <= 0) {
    throw new CodecError("bad or missing image dims");
  }
  if (typeof doc.image !== "string") {
    throw new CodecError("missing image payload");
  }
  const rgb = Buffer.from(doc.image, "base64");
  if (rgb.length !== w * h * 3) {
    throw new CodecError(`image payload is ${rgb.length} bytes, expected ${w * h * 3}`);
  }
  const gray = new Uint8Array(w * h);
  for (let i = 0; i < w * h; i++) {
    gray[i] = rgb[i * 3];
  }
  const points: Array<[number, number]> = [];
  for (const p of doc.points ?? []) {
    const x = Number(p[0]);
    const y = Number(p[1]);
    if (!(x >= 0 && x < w && y >= 0 && y < h)) {
      throw new CodecError(`point prompt (${x}, ${y}) outside image bounds`);
    }
    points.push([x, y]);
  }
  let dense: Uint8Array | null = null;
  if (doc.dense !== null && doc.dense !== undefined) {
    const bits = Buffer.from(doc.dense, "base64");
    if (bits.length !== w * h) {
      throw new CodecError(`dense payload is ${bits.length} bytes, expected ${w * h}`);
    }
    dense = new Uint8Array(bits);
  }
  return { id, w, h, gray, points, dense };
}

export function encodeResponse(id: number, channels: Channel[]): Buffer {
  const doc = {
    id,
    channels: channels.map((c) => ({
      mask: Buffer.from(c.mask).toString("base64"),
      iou: c.iou,
      logits: Buffer.from(c.logits.buffer, c.logits.byteOffset, c.logits.byteLength).toString("base64"),
    })),
  };
  return Buffer.from(JSON.stringify(doc), "utf-8");
}

export function encodeError(id: number, message: string): Buffer {
  return Buffer.from(JSON.stringify({ id, error: message }), "utf-8");
}
