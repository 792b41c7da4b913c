import { ApiClient } from "./api.js";
import type { Display, FrameUpdate } from "./viewer.js";
import { ViewerCore } from "./viewer.js";
import type { Meta } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class DomDisplay implements Display {
  private base = el<HTMLImageElement>("base");
  private image = el<HTMLImageElement>("overlay");
  private header = el<HTMLDivElement>("frame-header");
  private timings = el<HTMLDivElement>("timings");
  private badge = el<HTMLDivElement>("stale-badge");
  private banner = el<HTMLDivElement>("banner");
  private spinner = el<HTMLDivElement>("busy");
  private palette = el<HTMLDivElement>("palette");
  private sceneInfo = el<HTMLDivElement>("scene-info");
  private baseUrl: string | null = null;

  constructor(private onQueryPick: (name: string) => void) {}

  setMeta(meta: Meta): void {
    this.banner.style.display = "none";
    this.sceneInfo.textContent =
      `${meta.gaussians} gaussians · L=${meta.L} K=${meta.K} · ` +
      `${meta.levels} levels · D=${meta.D}`;
    this.palette.replaceChildren();
    for (const name of meta.queries) {
      const button = document.createElement("button");
      button.textContent = name;
      button.dataset.query = name;
      button.addEventListener("click", () => {
        for (const other of Array.from(this.palette.children)) {
          other.classList.remove("active");
        }
        button.classList.add("active");
        this.onQueryPick(name);
      });
      this.palette.appendChild(button);
    }
    (this.palette.firstElementChild as HTMLButtonElement | null)?.classList.add("active");
  }

  showFrame(frame: FrameUpdate): void {
    // header and image come from one object: what is claimed is what is shown
    this.badge.style.display = "none";
    if (frame.baseImage) {
      if (this.baseUrl) URL.revokeObjectURL(this.baseUrl);
      this.baseUrl = URL.createObjectURL(frame.baseImage);
      this.base.src = this.baseUrl;
    }
    this.image.src = `data:image/png;base64,${frame.overlayPngBase64}`;
    this.image.style.opacity = String(frame.overlayOpacity);
    this.base.style.opacity = "1.0";
    const pose = frame.request.camera;
    this.header.textContent =
      `${frame.query} · level ${frame.chosenLevel}` +
      `${frame.request.level === "auto" ? " (auto)" : ""} · window ${frame.request.window} · ` +
      `cam [${pose.position.map((v) => v.toFixed(2)).join(", ")}] · ` +
      `peak (${frame.point[0]}, ${frame.point[1]})`;
    const t = frame.timings;
    this.timings.textContent =
      `render ${t.render_ms.toFixed(1)} ms · decode ${t.decode_ms.toFixed(2)} ms · ` +
      `post ${t.post_ms.toFixed(2)} ms · total ${(t.render_ms + t.decode_ms + t.post_ms).toFixed(1)} ms`;
  }

  setBusy(busy: boolean): void {
    this.spinner.style.display = busy ? "inline-block" : "none";
  }

  markStale(message: string): void {
    this.badge.textContent = `stale frame: ${message}`;
    this.badge.style.display = "block";
    this.base.style.opacity = "0.55";
  }

  showConnectionError(message: string): void {
    this.banner.textContent = `cannot reach server: ${message}`;
    this.banner.style.display = "block";
  }
}

function serverUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("server") ?? "http://127.0.0.1:7878";
}

function boot(): void {
  const display = new DomDisplay((name) => core.setQuery(name));
  const core = new ViewerCore(new ApiClient(serverUrl()), display);

  el<HTMLButtonElement>("retry").addEventListener("click", () => void core.connect());
  el<HTMLSelectElement>("level").addEventListener("change", (event) => {
    const value = (event.target as HTMLSelectElement).value;
    core.setLevelMode(value === "auto" ? "auto" : Number(value));
  });
  el<HTMLInputElement>("window").addEventListener("change", (event) => {
    const raw = Number((event.target as HTMLInputElement).value);
    core.setWindow(raw % 2 === 0 ? raw + 1 : raw); // server requires odd
  });
  el<HTMLInputElement>("opacity").addEventListener("input", (event) => {
    core.setOverlayOpacity(Number((event.target as HTMLInputElement).value));
  });

  const image = el<HTMLImageElement>("overlay");
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  image.addEventListener("pointerdown", (event) => {
    dragging = true;
    lastX = event.clientX;
    lastY = event.clientY;
    image.setPointerCapture(event.pointerId);
  });
  image.addEventListener("pointermove", (event) => {
    if (!dragging) return;
    core.drag((event.clientX - lastX) * 0.6, (event.clientY - lastY) * 0.6);
    lastX = event.clientX;
    lastY = event.clientY;
  });
  image.addEventListener("pointerup", () => {
    dragging = false;
  });
  image.addEventListener("wheel", (event) => {
    event.preventDefault();
    core.zoom(event.deltaY > 0 ? 1.1 : 1 / 1.1);
  });

  void core.connect();
}

boot();
