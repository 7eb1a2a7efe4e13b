/** Mask timeline: blocks of (group, clip, window) mapped to set_mask. */

import { SessionClient, ProtocolFault } from "./client";
import { BodyGroup, GROUP_JOINTS, SetMaskMsg } from "./protocol";

export type BlockState = "pending" | "confirmed" | "failed";

export interface MaskBlock {
  id: number;
  group: BodyGroup;
  clipId: string;
  tStartS: number;
  tEndS: number;
  state: BlockState;
}

export interface Toast {
  kind: "error" | "warning";
  text: string;
}

let nextBlockId = 1;

/** Payload the block sends on the wire (everything but the seq). */
export function maskMessage(block: {
  group: BodyGroup;
  clipId: string;
  tStartS: number;
  tEndS: number;
}): Omit<SetMaskMsg, "seq"> {
  return {
    type: "set_mask",
    clip_id: block.clipId,
    t_start_s: block.tStartS,
    t_end_s: block.tEndS,
    group: block.group,
  };
}

function jointsOverlap(a: BodyGroup, b: BodyGroup): boolean {
  const set = new Set(GROUP_JOINTS[a]);
  return GROUP_JOINTS[b].some((j) => set.has(j));
}

function windowsOverlap(a: MaskBlock, b: { tStartS: number; tEndS: number }): boolean {
  return a.tStartS < b.tEndS && b.tStartS < a.tEndS;
}

export class Timeline {
  blocks: MaskBlock[] = [];
  toasts: Toast[] = [];

  constructor(private client: SessionClient) {}

  /**
   * Place a block: local overlap validation, then set_mask. The block stays
   * translucent ("pending") until the server acks; on error or ack timeout
   * it is removed/marked and a toast records the code.
   */
  async placeBlock(spec: {
    group: BodyGroup;
    clipId: string;
    tStartS: number;
    tEndS: number;
  }): Promise<MaskBlock | null> {
    if (!(spec.tStartS >= 0 && spec.tStartS < spec.tEndS)) {
      this.toasts.push({ kind: "warning", text: "window must run forward in time" });
      return null;
    }
    const clash = this.blocks.find(
      (b) =>
        b.state !== "failed" &&
        jointsOverlap(b.group, spec.group) &&
        windowsOverlap(b, spec),
    );
    if (clash) {
      this.toasts.push({
        kind: "warning",
        text: `overlaps block ${clash.id} on shared joints`,
      });
      return null;
    }
    const block: MaskBlock = {
      id: nextBlockId++,
      group: spec.group,
      clipId: spec.clipId,
      tStartS: spec.tStartS,
      tEndS: spec.tEndS,
      state: "pending",
    };
    this.blocks.push(block);
    try {
      await this.client.request(maskMessage(spec));
      block.state = "confirmed";
    } catch (err) {
      if (err instanceof ProtocolFault && err.code === "timeout") {
        block.state = "failed";
      } else {
        this.blocks = this.blocks.filter((b) => b.id !== block.id);
      }
      const code = err instanceof ProtocolFault ? err.code : "unknown";
      this.toasts.push({ kind: "error", text: `set_mask failed: ${code}` });
      return null;
    }
    return block;
  }

  async clear(): Promise<void> {
    await this.client.request({ type: "clear_mask" });
    this.blocks = [];
  }
}
