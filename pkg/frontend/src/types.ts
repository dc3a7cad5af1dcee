export interface PromptInfo {
  id: number;
  text: string;
  split: "seen" | "unseen";
}

export interface ServiceMeta {
  corpus_size: number;
  grid_levels: number[];
  v_dim: number;
  step: number;
  alpha_rounding: number;
  max_size: number;
  max_samples: number;
}

/** Body of POST /render; `pair`+`alpha` and `prompt_id` are mutually exclusive. */
export interface RenderRequest {
  prompt_id?: number;
  pair?: [number, number];
  alpha?: number;
  azimuth_deg: number;
  elevation_deg: number;
  distance: number;
  focal: number;
  size: number;
  samples: number;
}
