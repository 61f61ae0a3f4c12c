export interface PaletteEntry {
  id: number;
  name: string;
  color: [number, number, number];
}

export interface ProposalBatch {
  image_id: string;
  stage: number;
  strategy: string;
  size: [number, number];
  points?: [number, number][];
  mask_rle?: number[];
  palette: PaletteEntry[];
}

export interface DatasetInfo {
  width: number;
  height: number;
  num_classes: number;
  class_names: string[];
  palette: [number, number, number][];
  image_ids: string[];
}

export interface Status {
  stage: number;
  running: boolean;
  strategy: string;
  miou_history: { stage: number; miou: number }[];
  budget: {
    annotated_pixels: number;
    annotated_fraction: number;
    mean_points_per_image: number;
  };
  job_error: string | null;
}

export interface LabelEntry {
  x: number;
  y: number;
  class: number;
}

export interface AnnotateResponse {
  applied: number;
  rejected: { x: number; y: number; have: number; got: number }[];
  counts: { image: number; total: number };
}
