/**
 * Length-prefixed framing: a 4-byte little-endian payload length followed by
 * the payload bytes. FrameReader consumes arbitrary stream chunks and yields
 * complete frames.
 */

export function encodeFrame(payload: Buffer): Buffer {
  const header = Buffer.alloc(4);
  header.writeUInt32LE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

export class FrameReader {
  private buffer: Buffer = Buffer.alloc(0);

  /** Feed a chunk; returns every frame completed by it. */
  push(chunk: Buffer): Buffer[] {
    this.buffer = this.buffer.length === 0 ? chunk : Buffer.concat([this.buffer, chunk]);
    const frames: Buffer[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const length = this.buffer.readUInt32LE(0);
      if (this.buffer.length < 4 + length) break;
      frames.push(this.buffer.subarray(4, 4 + length));
      this.buffer = this.buffer.subarray(4 + length);
    }
    return frames;
  }

  get pending(): number {
    return this.buffer.length;
  }
}
