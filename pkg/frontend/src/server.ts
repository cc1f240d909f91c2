/**
 * Protocol server: sends the {"proto":1} handshake on connect, then answers
 * framed requests in arrival order until EOF. Malformed payloads produce an
 * error response carrying the request id when one can be parsed (-1
 * otherwise); the connection stays up.
 */

import * as net from "net";
import { Readable, Writable } from "stream";

import { Channel, CodecError, WireRequest, decodeRequest, encodeError, encodeResponse } from "./codec";
import { echoSegment, thresholdSegment } from "./oracle";
import { SamModel, loadSamModel, validateChannels } from "./sam";
import { FrameReader, encodeFrame } from "./framing";

export const PROTO_VERSION = 1;

export type Mode = "echo" | "threshold" | "sam";

export interface BridgeConfig {
  mode: Mode;
  multimask: boolean;
  checkpoint?: string;
  samVariant?: string;
  samRuntime?: string;
  /** Test hook: a pre-built model bypasses loadSamModel. */
  samModel?: SamModel;
}

export type Backend = (request: WireRequest) => Channel[] | Promise<Channel[]>;

export function createBackend(config: BridgeConfig): Backend {
  if (config.mode === "echo") {
    return (req) => echoSegment(req.w, req.h, req.dense);
  }
  if (config.mode === "threshold") {
    return (req) => thresholdSegment(req.gray, req.w, req.h, req.points, req.dense, {
      multimask: config.multimask,
    });
  }
  const model =
    config.samModel ??
    loadSamModel({
      checkpoint: config.checkpoint ?? "",
      variant: config.samVariant ?? "vit_b",
      runtimeModule: config.samRuntime,
    });
  return async (req) => validateChannels(await model.segment(req), req.w, req.h);
}

export async function serveStream(backend: Backend, input: Readable, output: Writable): Promise<void> {
  output.write(encodeFrame(Buffer.from(JSON.stringify({ proto: PROTO_VERSION }), "utf-8")));
  const reader = new FrameReader();
  let queue: Promise<void> = Promise.resolve();

  const handle = (payload: Buffer): Promise<void> =>
    (queue = queue.then(async () => {
      let id = -1;
      try {
        try {
          id = Number(JSON.parse(payload.toString("utf-8"))?.id ?? -1);
        } catch {
          id = -1;
        }
        const request = decodeRequest(payload);
        id = request.id;
        const channels = await backend(request);
        output.write(encodeFrame(encodeResponse(request.id, channels)));
      } catch (err) {
        const message = err instanceof CodecError || err instanceof Error ? err.message : String(err);
        output.write(encodeFrame(encodeError(id, message)));
      }
    }));

  await new Promise<void>((resolve, reject) => {
    input.on("data", (chunk: Buffer) => {
      for (const frame of reader.push(chunk)) {
        handle(frame);
      }
    });
    input.on("end", () => resolve());
    input.on("error", (err) => reject(err));
  });
  await queue;
}

export function serveTcp(backend: Backend, host: string, port: number): net.Server {
  const server = net.createServer((socket) => {
    serveStream(backend, socket, socket).catch(() => socket.destroy());
  });
  server.listen(port, host);
  return server;
}
