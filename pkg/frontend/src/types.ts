/** Wire types mirroring the sampling service. */

export type Point = [number, number];

export interface AgentRecord {
  history: Point[];
  future: Point[];
  pose: { x: number; y: number; heading: number };
}

export interface SceneRecord {
  format_version: number;
  scenario_id: string;
  layout: string;
  seed: number;
  agents: AgentRecord[];
}

export interface SceneSummary {
  scenario_id: string;
  layout: string;
  n_agents: number;
}

export interface AttractorPoint {
  agent: number;
  t_index: number;
  x: number;
  y: number;
}

export interface ConstraintSet {
  attractors?: AttractorPoint[];
  repeller?: { radius: number };
  lambda_attract?: number;
  lambda_repel?: number;
  score_thresholding: boolean;
}

export interface SampleRequest {
  scene_id?: string;
  scene?: SceneRecord;
  num_samples: number;
  seed: number;
  steps?: number;
  constraints?: ConstraintSet;
  cluster_k?: number;
  include_logp?: boolean;
}

export interface ResponseMetrics {
  mean_sample_overlap: number;
  mean_target_distance?: number;
  min_target_distance?: number;
}

export interface SampleResponse {
  format_version: number;
  scenario_id: string;
  seed: number;
  config: {
    num_samples: number;
    steps: number;
    constraints: ConstraintSet | null;
    cluster_k: number | null;
  };
  samples: Point[][][]; // [sample][agent][t] -> [x, y]
  latents: number[][][];
  logp?: number[];
  clusters?: { trajectories: Point[][][]; probabilities: number[] };
  metrics: ResponseMetrics;
  timings_ms: { sample: number; total: number };
}

export type SeedMode = "fixed" | "fresh";
