// Session state for the viewer: owns the prompt list, tau, and the current
// frame, runs queries, and caches the decoded labels for every frame so
// scrubbing the timeline never touches the network.

import { ApiClient, ApiError, QueryResponse } from "./client.js";
import { colorizeLabels } from "./colors.js";
import { decodeLabels } from "./labels.js";

export interface QueryResult {
  classes: string[];
  noLabelIndex: number;
  frameLabels: Uint16Array[]; // frame index -> per-point labels
  queryMs: number;
}

export function parsePrompts(text: string): string[] {
  return text
    .split(",")
    .map((p) => p.trim())
    .filter((p) => p.length > 0);
}

export class Session {
  promptText = "";
  tau: number | null = null; // null -> server default
  currentFrame = 0;
  result: QueryResult | null = null;
  error: string | null = null; // non-null -> banner visible
  lastQueryLatencyMs: number | null = null;

  private inflight: AbortController | null = null;
  private generation = 0;

  constructor(private client: ApiClient) {}

  prompts(): string[] {
    return parsePrompts(this.promptText);
  }

  canQuery(): boolean {
    return this.prompts().length > 0;
  }

  /** Labels for a frame from the last completed query; never hits the network. */
  labelsForFrame(t: number): Uint16Array | null {
    if (!this.result || t < 0 || t >= this.result.frameLabels.length) return null;
    return this.result.frameLabels[t];
  }

  colorsForFrame(t: number): Float32Array | null {
    const labels = this.labelsForFrame(t);
    if (labels === null || this.result === null) return null;
    return colorizeLabels(labels, this.result.noLabelIndex);
  }

  /**
   * Run one query; labels for every frame arrive in a single response. A
   * newer submission aborts whatever is still in flight, and a response
   * that lost the race is dropped when it finally arrives.
   */
  async submitQuery(): Promise<void> {
    const prompts = this.prompts();
    if (prompts.length === 0) return; // the UI keeps the button disabled too
    if (this.inflight) this.inflight.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const generation = ++this.generation;
    let response: QueryResponse;
    try {
      response = await this.client.postQuery(prompts, this.tau, controller.signal);
    } catch (err) {
      if (generation !== this.generation) return; // superseded; stay quiet
      this.inflight = null;
      if (err instanceof ApiError) {
        this.error = err.message; // e.g. an unknown prompt, shown verbatim
      } else if ((err as Error)?.name === "AbortError") {
        return;
      } else {
        this.error = `query failed: ${(err as Error)?.message ?? String(err)}`;
      }
      return;
    }
    if (generation !== this.generation) return; // a newer query took over
    this.inflight = null;
    this.error = null;
    this.result = {
      classes: response.classes,
      noLabelIndex: response.no_label_index,
      frameLabels: response.frames.map((f) => decodeLabels(f.labels)),
      queryMs: response.query_ms,
    };
    this.lastQueryLatencyMs = response.query_ms;
  }
}

/**
 * Canonical per-point group ids (first occurrence order). Two label arrays
 * that group the points identically map to the same id array, no matter
 * which class indices produced the groups — reordering the prompts must
 * leave this partition unchanged even though the colors may permute.
 */
export function partitionOf(labels: Uint16Array): number[] {
  const seen = new Map<number, number>();
  const out = new Array<number>(labels.length);
  for (let i = 0; i < labels.length; i++) {
    let id = seen.get(labels[i]);
    if (id === undefined) {
      id = seen.size;
      seen.set(labels[i], id);
    }
    out[i] = id;
  }
  return out;
}
