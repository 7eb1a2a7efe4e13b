/** Wire types for the control-service protocol (newline-delimited JSON). */

export const FPS = 30;

export const JOINT_NAMES = [
  "pelvis", "torso", "head",
  "l_shoulder", "l_elbow", "l_hand",
  "r_shoulder", "r_elbow", "r_hand",
  "l_hip", "l_knee", "l_foot",
  "r_hip", "r_knee", "r_foot",
] as const;

export const NUM_JOINTS = JOINT_NAMES.length;

/** Parent index per joint (-1 for the root); used to draw bone segments. */
export const JOINT_PARENTS = [
  -1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13,
] as const;

export type BodyGroup = "WHOLE" | "UPPER" | "LOWER" | "LEFT_ARM" | "RIGHT_ARM";

export const GROUP_JOINTS: Record<BodyGroup, readonly number[]> = {
  WHOLE: [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
  UPPER: [1, 2, 3, 4, 5, 6, 7, 8],
  LOWER: [9, 10, 11, 12, 13, 14],
  LEFT_ARM: [3, 4, 5],
  RIGHT_ARM: [6, 7, 8],
};

export type Vec2 = [number, number];
export type Vec3 = [number, number, number];

export interface CreateSessionMsg {
  type: "create_session";
  seq: number;
  terrain_kind?: string;
  terrain_file?: string;
}

export interface SetTrajectoryMsg {
  type: "set_trajectory";
  seq: number;
  points: Vec2[];
}

export interface SetMaskMsg {
  type: "set_mask";
  seq: number;
  clip_id: string;
  t_start_s: number;
  t_end_s: number;
  group?: BodyGroup;
  joints?: number[];
}

export interface SimpleMsg {
  type: "clear_mask" | "list_clips" | "play" | "pause" | "reset" | "close";
  seq: number;
}

export interface StepMsg {
  type: "step";
  seq: number;
  n: number;
}

export type ClientMessage =
  | CreateSessionMsg
  | SetTrajectoryMsg
  | SetMaskMsg
  | StepMsg
  | SimpleMsg;

export interface SessionCreatedMsg {
  type: "session_created";
  id: string;
  seq: number;
}

export interface AckMsg {
  type: "ack";
  seq: number;
}

export interface ClipInfo {
  id: string;
  frames: number;
  fps: number;
  style: string | null;
}

export interface ClipsMsg {
  type: "clips";
  clips: ClipInfo[];
  seq: number;
}

export interface FrameMsg {
  type: "frame";
  t: number;
  root: { pos: Vec3; yaw: number };
  joint_world_positions: Vec3[];
  joint_rotations: number[][];
  rewards: { traj: number; motion: number; amp: number; total: number };
  mask_active: boolean[];
  terminated?: boolean;
  cause?: string;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  detail: string;
  seq?: number | null;
}

export interface DroppedMsg {
  type: "dropped";
  count: number;
}

export type ServerMessage =
  | SessionCreatedMsg
  | AckMsg
  | ClipsMsg
  | FrameMsg
  | ErrorMsg
  | DroppedMsg;

/** Parse one wire line; returns null (with a console diagnostic) on junk. */
export function parseServerMessage(line: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(line);
  } catch (err) {
    console.error("unparseable server line", err);
    return null;
  }
  if (typeof msg !== "object" || msg === null || !("type" in msg)) {
    console.error("server message without a type", msg);
    return null;
  }
  const typed = msg as ServerMessage;
  if (typed.type === "frame" && !isValidFrame(typed)) {
    console.error("malformed frame dropped", msg);
    return null;
  }
  return typed;
}

function isValidFrame(f: FrameMsg): boolean {
  return (
    typeof f.t === "number" &&
    Array.isArray(f.joint_world_positions) &&
    f.joint_world_positions.length === NUM_JOINTS &&
    Array.isArray(f.mask_active) &&
    f.mask_active.length === NUM_JOINTS &&
    typeof f.rewards === "object" &&
    f.rewards !== null &&
    ["traj", "motion", "amp", "total"].every(
      (k) => typeof (f.rewards as Record<string, unknown>)[k] === "number",
    )
  );
}

export function encodeMessage(msg: ClientMessage): string {
  return JSON.stringify(msg) + "\n";
}
