// Wires the DOM controls to the session and the renderer. Build with
// `npm run build`, then serve the frontend directory as the service's
// static root so ./dist/main.js resolves.

import { ApiClient } from "./client.js";
import { classColor, NO_LABEL_COLOR } from "./colors.js";
import { Session } from "./session.js";
import { PointCloudViewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

async function boot(): Promise<void> {
  const promptsInput = el<HTMLInputElement>("prompts");
  const tauInput = el<HTMLInputElement>("tau");
  const queryButton = el<HTMLButtonElement>("query");
  const frameSlider = el<HTMLInputElement>("frame");
  const frameLabel = el<HTMLSpanElement>("frame-label");
  const latencyLabel = el<HTMLSpanElement>("latency");
  const banner = el<HTMLDivElement>("banner");
  const legend = el<HTMLDivElement>("legend");
  const canvas = el<HTMLCanvasElement>("view");

  const client = new ApiClient();
  const session = new Session(client);
  const viewer = new PointCloudViewer(canvas);
  const geometryCache = new Map<number, Float32Array>();

  function syncBanner(): void {
    banner.hidden = session.error === null;
    banner.textContent = session.error ?? "";
  }

  function syncLegend(): void {
    legend.replaceChildren();
    if (!session.result) return;
    const names = [...session.result.classes, "no label"];
    names.forEach((name, i) => {
      const chip = document.createElement("span");
      chip.className = "chip";
      const rgb =
        i === session.result!.noLabelIndex ? NO_LABEL_COLOR : classColor(i);
      const swatch = document.createElement("i");
      swatch.style.background = cssColor(rgb);
      chip.append(swatch, name);
      legend.append(chip);
    });
  }

  async function showFrame(t: number): Promise<void> {
    session.currentFrame = t;
    frameLabel.textContent = String(t);
    let geometry = geometryCache.get(t);
    if (!geometry) {
      geometry = await client.getFramePoints(t);
      geometryCache.set(t, geometry);
    }
    viewer.setFrame(geometry);
    const colors = session.colorsForFrame(t);
    if (colors) viewer.setLabelColors(colors);
    else viewer.clearLabelColors();
    viewer.draw();
  }

  promptsInput.addEventListener("input", () => {
    session.promptText = promptsInput.value;
    queryButton.disabled = !session.canQuery();
  });

  tauInput.addEventListener("change", () => {
    const v = Number(tauInput.value);
    session.tau = Number.isFinite(v) ? v : null;
  });

  queryButton.addEventListener("click", async () => {
    session.promptText = promptsInput.value;
    if (!session.canQuery()) return;
    queryButton.classList.add("busy");
    await session.submitQuery();
    queryButton.classList.remove("busy");
    syncBanner();
    syncLegend();
    if (session.lastQueryLatencyMs !== null) {
      latencyLabel.textContent = `${session.lastQueryLatencyMs.toFixed(1)} ms`;
    }
    await showFrame(session.currentFrame);
  });

  frameSlider.addEventListener("input", () => {
    // Labels for every frame are already cached: scrubbing is local.
    void showFrame(Number(frameSlider.value));
  });

  window.addEventListener("resize", () => viewer.draw());

  try {
    const meta = await client.getMeta();
    frameSlider.max = String(Math.max(0, meta.num_frames - 1));
    frameSlider.value = "0";
    await showFrame(0);
  } catch (err) {
    session.error = `could not reach the asset service: ${(err as Error)?.message ?? err}`;
    syncBanner();
  }
}

function cssColor(rgb: readonly number[]): string {
  const c = rgb.map((v) => Math.round(v * 255));
  return `rgb(${c[0]}, ${c[1]}, ${c[2]})`;
}

boot();
