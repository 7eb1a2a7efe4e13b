/** Frame -> view model: bone segments, highlights, banner, sparklines. */

import { FrameMsg, JOINT_PARENTS, Vec3 } from "./protocol";

export interface BoneSegment {
  from: Vec3;
  to: Vec3;
  highlighted: boolean;
}

export interface FrameView {
  t: number;
  segments: BoneSegment[];
  highlightedJoints: number[];
  banner: string | null;
  rewards: { traj: number; motion: number; amp: number; total: number };
}

/** Pure projection of one frame message into drawable state. */
export function buildFrameView(frame: FrameMsg): FrameView {
  const pos = frame.joint_world_positions;
  const segments: BoneSegment[] = [];
  for (let j = 0; j < JOINT_PARENTS.length; j++) {
    const parent = JOINT_PARENTS[j];
    if (parent < 0) continue;
    segments.push({
      from: pos[parent],
      to: pos[j],
      highlighted: frame.mask_active[j],
    });
  }
  const highlightedJoints: number[] = [];
  frame.mask_active.forEach((on, j) => {
    if (on) highlightedJoints.push(j);
  });
  return {
    t: frame.t,
    segments,
    highlightedJoints,
    banner: frame.terminated ? frame.cause ?? "terminated" : null,
    rewards: frame.rewards,
  };
}

/** Fixed-capacity ring buffers feeding the live reward sparklines. */
export class RewardBuffers {
  readonly traj: number[] = [];
  readonly motion: number[] = [];
  readonly amp: number[] = [];
  readonly total: number[] = [];

  constructor(private capacity: number = 300) {}

  push(frame: FrameMsg): void {
    const channels: Array<[number[], number]> = [
      [this.traj, frame.rewards.traj],
      [this.motion, frame.rewards.motion],
      [this.amp, frame.rewards.amp],
      [this.total, frame.rewards.total],
    ];
    for (const [buf, v] of channels) {
      buf.push(v);
      if (buf.length > this.capacity) buf.shift();
    }
  }
}
