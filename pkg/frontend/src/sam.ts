/**
 * SAM-backed mode. The neural runtime is not bundled: a runtime module is
 * loaded from --sam-runtime and must export
 * `createModel(checkpoint: string, variant: string): SamModel`. The bridge
 * validates the checkpoint path and adapts the model's channels onto the
 * wire protocol; everything neural stays behind the SamModel interface.
 */

import * as fs from "fs";

import { Channel, WireRequest } from "./codec";

export interface SamModel {
  segment(request: WireRequest): Channel[] | Promise<Channel[]>;
}

export interface SamConfig {
  checkpoint: string;
  variant: string;
  runtimeModule?: string;
}

export function loadSamModel(config: SamConfig): SamModel {
  try {
    fs.accessSync(config.checkpoint, fs.constants.R_OK);
  } catch {
    throw new Error(`sam mode requires a readable checkpoint; cannot read ${config.checkpoint}`);
  }
  if (!config.runtimeModule) {
    throw new Error(
      "sam mode needs --sam-runtime <module> exporting createModel(checkpoint, variant); " +
        "no neural runtime is bundled with the bridge",
    );
  }
  // eslint-disable-next-line @typescript-eslint/no-var-requires
  const runtime = require(config.runtimeModule);
  if (typeof runtime.createModel !== "function") {
    throw new Error(`sam runtime ${config.runtimeModule} does not export createModel()`);
  }
  return runtime.createModel(config.checkpoint, config.variant) as SamModel;
}

export function validateChannels(channels: Channel[], w: number, h: number): Channel[] {
  if (channels.length < 1) {
    throw new Error("sam model returned no channels");
  }
  for (const c of channels) {
    if (c.mask.length !== w * h) {
      throw new Error("sam model mask dims do not match the request");
    }
    if (!(c.iou >= 0 && c.iou <= 1)) {
      throw new Error(`sam model predicted_iou ${c.iou} outside [0, 1]`);
    }
    if (c.logits.length !== (w >> 2) * (h >> 2)) {
      throw new Error("sam model logits are not quarter resolution");
    }
  }
  return channels;
}
