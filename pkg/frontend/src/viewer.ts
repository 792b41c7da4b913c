import { ApiClient } from "./api.js";
import { clampOrbit, orbitBy, orbitToPose, zoomBy, type OrbitCamera } from "./orbit.js";
import { LatestWins } from "./scheduler.js";
import type { LevelMode, Meta, QueryRequest, QueryResponse, Timings } from "./types.js";

/** Everything the user can change between frames. */
export interface ViewerState {
  orbit: OrbitCamera;
  query: string | null;
  levelMode: LevelMode;
  window: number;
  overlayOpacity: number;
  imageSize: number;
}

/** One displayed frame: the overlay plus the exact tuple it was computed for. */
export interface FrameUpdate {
  request: QueryRequest;
  query: string;
  chosenLevel: number;
  timings: Timings;
  point: [number, number];
  overlayPngBase64: string;
  /** Plain color render underneath the overlay; null until fetched. */
  baseImage: Blob | null;
  overlayOpacity: number;
}

interface FrameData {
  response: QueryResponse;
  baseImage: Blob | null;
}

/**
 * Rendering surface the core drives. The DOM binding renders header text and
 * image from the same FrameUpdate object, so what the header claims and what
 * the overlay shows can never diverge.
 */
export interface Display {
  setMeta(meta: Meta): void;
  showFrame(frame: FrameUpdate): void;
  setBusy(busy: boolean): void;
  /** A request failed; the previous frame stays up with a stale badge. */
  markStale(message: string): void;
  showConnectionError(message: string): void;
}

export const DEFAULT_ORBIT: OrbitCamera = {
  azimuthDeg: 0,
  elevationDeg: 8,
  radius: 3.4,
  target: [0, 0, 0],
};

export class ViewerCore {
  state: ViewerState;
  meta: Meta | null = null;
  lastFrame: FrameUpdate | null = null;
  private scheduler: LatestWins<QueryRequest, FrameData>;
  private baseCache: { key: string; blob: Blob } | null = null;

  constructor(private api: ApiClient, private display: Display) {
    this.state = {
      orbit: DEFAULT_ORBIT,
      query: null,
      levelMode: "auto",
      window: 3,
      overlayOpacity: 0.85,
      imageSize: 64,
    };
    this.scheduler = new LatestWins(
      (request) => {
        this.display.setBusy(true);
        return this.fetchFrame(request);
      },
      (request, data) => {
        this.display.setBusy(false);
        this.applyFrame(request, data);
      },
      (_request, error) => {
        this.display.setBusy(false);
        this.display.markStale(error instanceof Error ? error.message : String(error));
      }
    );
  }

  /** One scheduler slot: query, then the base color render (cached per pose). */
  private async fetchFrame(request: QueryRequest): Promise<FrameData> {
    const response = await this.api.query(request);
    const key = JSON.stringify([request.camera, request.width, request.height]);
    let blob = this.baseCache?.key === key ? this.baseCache.blob : null;
    if (blob === null) {
      blob = await this.api.render({
        camera: request.camera,
        width: request.width,
        height: request.height,
      });
      this.baseCache = { key, blob };
    }
    return { response, baseImage: blob };
  }

  /** Fetch /meta, populate the palette, adopt the server's default camera. */
  async connect(): Promise<boolean> {
    try {
      const meta = await this.api.meta();
      this.meta = meta;
      if (meta.default_camera) {
        const p = meta.default_camera.position;
        const t = meta.default_camera.look_at;
        const dx = p[0] - t[0];
        const dy = p[1] - t[1];
        const dz = p[2] - t[2];
        const radius = Math.sqrt(dx * dx + dy * dy + dz * dz);
        this.state.orbit = clampOrbit({
          azimuthDeg: (Math.atan2(dx, -dz) * 180) / Math.PI,
          elevationDeg: (Math.asin(dy / radius) * 180) / Math.PI,
          radius,
          target: t,
        });
      }
      this.state.imageSize = Math.min(this.state.imageSize, meta.size_cap);
      if (meta.queries.length > 0) this.state.query = meta.queries[0];
      this.display.setMeta(meta);
      this.refresh();
      return true;
    } catch (error) {
      this.display.showConnectionError(
        error instanceof Error ? error.message : String(error)
      );
      return false;
    }
  }

  currentRequest(): QueryRequest | null {
    if (this.state.query === null) return null;
    return {
      camera: orbitToPose(this.state.orbit, this.state.imageSize, this.state.imageSize),
      width: this.state.imageSize,
      height: this.state.imageSize,
      query: this.state.query,
      level: this.state.levelMode,
      window: this.state.window,
    };
  }

  refresh(): void {
    const request = this.currentRequest();
    if (request !== null) this.scheduler.request(request);
  }

  setQuery(name: string): void {
    this.state.query = name;
    this.refresh();
  }

  setLevelMode(mode: LevelMode): void {
    this.state.levelMode = mode;
    this.refresh();
  }

  setWindow(window: number): void {
    this.state.window = window;
    this.refresh();
  }

  setOverlayOpacity(opacity: number): void {
    // display-only mapping: re-show the last frame, no new request
    this.state.overlayOpacity = opacity;
    if (this.lastFrame) {
      this.lastFrame = { ...this.lastFrame, overlayOpacity: opacity };
      this.display.showFrame(this.lastFrame);
    }
  }

  drag(dAzimuthDeg: number, dElevationDeg: number): void {
    this.state.orbit = orbitBy(this.state.orbit, dAzimuthDeg, dElevationDeg);
    this.refresh();
  }

  zoom(factor: number): void {
    this.state.orbit = zoomBy(this.state.orbit, factor);
    this.refresh();
  }

  private applyFrame(request: QueryRequest, data: FrameData): void {
    this.lastFrame = {
      request,
      query: data.response.query,
      chosenLevel: data.response.level,
      timings: data.response.timings_ms,
      point: data.response.point,
      overlayPngBase64: data.response.overlay_png_base64,
      baseImage: data.baseImage,
      overlayOpacity: this.state.overlayOpacity,
    };
    this.display.showFrame(this.lastFrame);
  }
}
