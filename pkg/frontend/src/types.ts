/** Wire types of the splatfield HTTP API, mirrored field for field. */

export interface CameraPoseDict {
  position: [number, number, number];
  look_at: [number, number, number];
  up?: [number, number, number];
  fov_y_deg?: number;
  width?: number;
  height?: number;
  near?: number;
}

export interface Meta {
  request_id: string;
  gaussians: number;
  levels: number;
  L: number;
  K: number;
  D: number;
  size_cap: number;
  queries: string[];
  default_camera: CameraPoseDict | null;
}

export interface Timings {
  render_ms: number;
  decode_ms: number;
  post_ms: number;
}

export interface ScoreStats {
  min: number;
  max: number;
  mean: number;
}

export type LevelMode = "auto" | number;

export interface QueryRequest {
  camera: CameraPoseDict;
  width: number;
  height: number;
  query: string | number[];
  level: LevelMode;
  window: number;
}

export interface QueryResponse {
  request_id: string;
  query: string;
  level: number;
  timings_ms: Timings;
  point: [number, number];
  score_stats: ScoreStats;
  settings: Record<string, unknown>;
  overlay_png_base64: string;
}

export interface RenderRequest {
  camera: CameraPoseDict;
  width: number;
  height: number;
}
