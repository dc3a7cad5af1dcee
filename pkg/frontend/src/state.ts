import type { RenderRequest } from "./types.js";

/** Everything the controls can change. The server is never mutated. */
export interface ViewerState {
  promptA: number | null;
  promptB: number | null; // interpolation partner; alpha applies only when set
  alpha: number;
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  focal: number;
  size: number;
  samples: number;
}

export function initialState(): ViewerState {
  return {
    promptA: null,
    promptB: null,
    alpha: 0,
    azimuthDeg: 30,
    elevationDeg: 20,
    distance: 2.5,
    focal: 1.0,
    size: 128,
    samples: 64,
  };
}

export function alphaEnabled(state: ViewerState): boolean {
  return state.promptB !== null && state.promptB !== state.promptA;
}

/** Quantize camera angles to 1 degree so the server's modulation/render path
 *  sees stable values and repeated drags hit the same cached entries. */
export function quantizeAngle(deg: number): number {
  const rounded = Math.round(deg);
  return ((rounded % 360) + 360) % 360;
}

export function clampAlpha(alpha: number): number {
  return Math.min(1, Math.max(0, alpha));
}

/**
 * Pure state -> request mapping: the same state always yields an identical
 * object (and therefore byte-identical JSON).
 */
export function buildRenderRequest(state: ViewerState): RenderRequest | null {
  if (state.promptA === null) {
    return null;
  }
  const base = {
    azimuth_deg: quantizeAngle(state.azimuthDeg),
    elevation_deg: Math.round(state.elevationDeg),
    distance: state.distance,
    focal: state.focal,
    size: state.size,
    samples: state.samples,
  };
  if (alphaEnabled(state)) {
    return {
      pair: [state.promptA, state.promptB as number],
      alpha: clampAlpha(state.alpha),
      ...base,
    };
  }
  return { prompt_id: state.promptA, ...base };
}

/** Alpha values for a left-to-right interpolation strip of n frames. */
export function stripAlphas(n: number): number[] {
  if (n < 2) {
    return [0];
  }
  return Array.from({ length: n }, (_, k) => k / (n - 1));
}
