// SPDX-License-Identifier: Apache-2.0
//
// HTTP contract of `ocular serve` for the labeling UI. Every path is under
// /api; bodies are JSON unless noted. Errors come back as ApiError with the
// status codes listed per route.

export type StreamId = number;
export type CameraId = "L0" | "L1" | "R0" | "R1" | "scene";
export type Role = "eye_L0" | "eye_L1" | "eye_R0" | "eye_R1" | "scene";

// Label classes:
//   glint:<L|R>:<0..3>     reflected LED spot
//   marker:scene_back      back marker of the scene camera
//   marker:cam:<CameraId>  marker of an eye camera
//   corner:<row>:<col>     checkerboard inner corner
export type LabelClass = string;

export interface LabelInput {
  stream_id: StreamId;
  frame_index: number;
  class: LabelClass;
  x_px: number; // sub-pixel, image coordinates
  y_px: number;
  labeler?: string;
  ts_utc?: string; // ISO 8601
}

export interface LabelRecord extends Required<LabelInput> {
  revision: number; // server-assigned, 1 on first write, bumped on replace
}

export interface ClockModel {
  offset_us: number; // host = offset + skew * device
  skew: number;
  fit_residual_us: number;
  sample_count: number;
}

export interface StreamInfo {
  id: StreamId;
  role: Role;
  width: number;
  height: number;
  fps_nominal: number;
  clock_model?: ClockModel;
  degraded?: true;
  degraded_reason?: string;
}

export interface Checkerboard {
  inner_rows: number;
  inner_cols: number;
  square_mm: number;
}

export interface Captures {
  boards: Record<string, Checkerboard>;
  intrinsics: { camera: CameraId; board: string; frames: number[] }[];
  stereo: { cameras: [CameraId, CameraId]; board: string; frames: number[] }[];
  mirrors: {
    kind: "leds" | "scene_position" | "scene_orientation";
    board: string;
    offset_mm: number;
    frame: number;
    observers: CameraId[];
  }[];
  eye_frames: number[];
}

export interface SessionManifest {
  session_id: string;
  created_utc: string;
  streams: StreamInfo[];
  captures?: Captures;
  drop_report?: { streams: Record<string, { missing_group_ts: number[]; coverage: number }> };
  calibration_ref?: string;
}

export interface Pose {
  q: [number, number, number, number]; // w, x, y, z; world -> camera
  t_mm: [number, number, number];
}

export interface CalibratedCamera {
  model_kind: "radial_tangential" | "equidistant_fisheye";
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  dist: number[];
  width: number;
  height: number;
  pose: Pose;
}

export interface Calibration {
  root_camera: CameraId;
  cameras: Record<string, CalibratedCamera>;
  leds: Record<"L" | "R", Record<string, [number, number, number]>>;
  meta: { wavelength_nm: number; fps_nominal: number };
}

export type JobKind = "calib-intrinsics" | "calib-stereo" | "calib-leds" | "calib-scene" | "compose-world";

export interface JobRequest {
  kind: JobKind;
  // calib-intrinsics: camera; calib-stereo: pair ("A,B"); compose-world: root.
  params?: Record<string, string>;
}

export interface JobStatus {
  job_id: string;
  session: string;
  kind: JobKind;
  state: "queued" | "running" | "done" | "failed"; // done and failed are final
  result_ref?: string; // output file, relative to the session directory
  error?: string; // "<ErrorKind>: message"
}

export interface OverlayPoint {
  class: LabelClass;
  predicted: [number, number];
  observed: [number, number] | null; // the stored label, when there is one
}

export interface Overlay {
  camera: CameraId;
  frame_index: number;
  points: OverlayPoint[];
}

export interface ApiError {
  error: string;
  path?: string; // JSON path of the offending field, e.g. "$[3].class"
}

export interface Routes {
  // 200
  "GET /api/sessions": { response: { id: string; manifest: SessionManifest }[] };
  // 200 image/png; 404 unknown session, stream or frame
  "GET /api/sessions/{s}/streams/{id}/frames/{n}": { response: Blob };
  // 200; 404
  "GET /api/sessions/{s}/labels": { response: LabelRecord[] };
  // 200 with the stored records; 400 (whole batch rejected, nothing written); 404
  "PUT /api/sessions/{s}/labels": { body: LabelInput[]; response: LabelRecord[] };
  // 202; 400 unknown kind or bad params; 404; 409 a job is already queued or running for the session
  "POST /api/sessions/{s}/jobs": { body: JobRequest; response: JobStatus };
  // 200; 404
  "GET /api/jobs/{id}": { response: JobStatus };
  // 200; 404 before compose-world has run
  "GET /api/sessions/{s}/calibration": { response: Calibration };
  // 200; 404 unknown camera, frame, or camera without intrinsics yet
  "GET /api/sessions/{s}/overlay/{camera}/{n}": { response: Overlay };
}
