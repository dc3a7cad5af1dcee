import { ApiError, RenderClient } from "./api.js";
import { DEBOUNCE_MS, RenderScheduler } from "./debounce.js";
import { alphaEnabled, buildRenderRequest, clampAlpha, initialState, stripAlphas, ViewerState } from "./state.js";
import { badgeListHtml, emptyCorpusHtml, errorBannerHtml, promptOptionsHtml } from "./render.js";
import type { PromptInfo, RenderRequest } from "./types.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

export class ViewerApp {
  state: ViewerState = initialState();
  private prompts: PromptInfo[] = [];
  private lastUrl: string | null = null;
  private scheduler: RenderScheduler<RenderRequest, Blob>;

  constructor(private readonly client: RenderClient) {
    this.scheduler = new RenderScheduler(
      (req) => this.client.render(req),
      (blob) => this.showFrame(blob),
      (err) => this.showError(err),
      DEBOUNCE_MS,
    );
  }

  async start(): Promise<void> {
    try {
      this.prompts = await this.client.prompts();
    } catch (err) {
      this.showError(err, true);
      return;
    }
    byId("status").textContent = "";
    if (this.prompts.length === 0) {
      byId("prompt-list").innerHTML = emptyCorpusHtml();
      for (const id of ["prompt-a", "prompt-b", "alpha"]) {
        byId<HTMLInputElement>(id).disabled = true;
      }
      return;
    }
    byId<HTMLSelectElement>("prompt-a").innerHTML = promptOptionsHtml(this.prompts);
    byId<HTMLSelectElement>("prompt-b").innerHTML = promptOptionsHtml(this.prompts, true);
    byId("prompt-list").innerHTML = badgeListHtml(this.prompts);
    this.state.promptA = this.prompts[0].id;
    this.wire();
    this.syncControls();
    this.kick(true);
  }

  private wire(): void {
    const onA = () => {
      const v = byId<HTMLSelectElement>("prompt-a").value;
      this.state.promptA = v === "" ? null : Number(v);
      this.kick(true);
    };
    const onB = () => {
      const v = byId<HTMLSelectElement>("prompt-b").value;
      this.state.promptB = v === "" ? null : Number(v);
      this.syncControls();
      this.kick(true);
    };
    byId("prompt-a").addEventListener("change", onA);
    byId("prompt-b").addEventListener("change", onB);

    const sliders: Array<[string, (v: number) => void]> = [
      ["alpha", (v) => (this.state.alpha = clampAlpha(v))],
      ["azimuth", (v) => (this.state.azimuthDeg = v)],
      ["elevation", (v) => (this.state.elevationDeg = v)],
      ["distance", (v) => (this.state.distance = v)],
      ["focal", (v) => (this.state.focal = v)],
    ];
    for (const [id, apply] of sliders) {
      byId(id).addEventListener("input", () => {
        apply(Number(byId<HTMLInputElement>(id).value));
        if (id === "alpha") {
          byId("alpha-value").textContent = this.state.alpha.toFixed(2);
        }
        this.kick();
      });
    }
    for (const id of ["size", "samples"]) {
      byId(id).addEventListener("change", () => {
        this.state.size = Number(byId<HTMLSelectElement>("size").value);
        this.state.samples = Number(byId<HTMLSelectElement>("samples").value);
        this.kick();
      });
    }

    // drag to orbit; angles quantize to whole degrees in the request mapping
    const frame = byId<HTMLImageElement>("frame");
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    frame.addEventListener("pointerdown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      frame.setPointerCapture(ev.pointerId);
    });
    frame.addEventListener("pointermove", (ev) => {
      if (!dragging) {
        return;
      }
      this.state.azimuthDeg -= (ev.clientX - lastX) * 0.5;
      this.state.elevationDeg = Math.min(80, Math.max(-30, this.state.elevationDeg + (ev.clientY - lastY) * 0.5));
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.syncControls();
      this.kick();
    });
    frame.addEventListener("pointerup", () => (dragging = false));

    byId("strip-button").addEventListener("click", () => void this.renderStrip());
  }

  private syncControls(): void {
    const alpha = byId<HTMLInputElement>("alpha");
    alpha.disabled = !alphaEnabled(this.state);
    byId<HTMLButtonElement>("strip-button").disabled = !alphaEnabled(this.state);
    byId<HTMLInputElement>("azimuth").value = String(((this.state.azimuthDeg % 360) + 360) % 360);
    byId<HTMLInputElement>("elevation").value = String(this.state.elevationDeg);
  }

  /** Schedule a render for the current state (debounced unless immediate). */
  kick(immediate = false): void {
    const req = buildRenderRequest(this.state);
    if (req === null) {
      return;
    }
    if (immediate) {
      this.scheduler.requestNow(req);
    } else {
      this.scheduler.request(req);
    }
  }

  private showFrame(blob: Blob): void {
    const url = URL.createObjectURL(blob);
    byId<HTMLImageElement>("frame").src = url;
    if (this.lastUrl) {
      URL.revokeObjectURL(this.lastUrl);
    }
    this.lastUrl = url;
    byId("status").textContent = "";
  }

  private showError(err: unknown, withRetry = false): void {
    const msg = err instanceof ApiError ? `service error ${err.status}: ${err.message}`
      : `service unreachable: ${String(err)}`;
    byId("status").innerHTML = errorBannerHtml(msg);
    if (withRetry) {
      byId("retry").addEventListener("click", () => void this.start());
    }
  }

  /** Render an alpha sweep left-to-right, like the interpolation strips. */
  async renderStrip(n = 7): Promise<void> {
    const base = buildRenderRequest(this.state);
    if (base === null || !("pair" in base)) {
      return;
    }
    const container = byId("strip");
    container.innerHTML = "";
    for (const alpha of stripAlphas(n)) {
      try {
        const blob = await this.client.render({ ...base, alpha });
        const img = document.createElement("img");
        img.className = "strip-frame";
        img.src = URL.createObjectURL(blob);
        img.title = `alpha = ${alpha.toFixed(3)}`;
        container.appendChild(img);
      } catch (err) {
        this.showError(err);
        return;
      }
    }
  }
}

export function boot(): void {
  const base = (window as unknown as { TT3D_SERVICE?: string }).TT3D_SERVICE
    ?? `${window.location.protocol}//${window.location.hostname}:8787`;
  const app = new ViewerApp(new RenderClient(base));
  void app.start();
}
