/** Payload types mirroring the annotation service's JSON API. */

export type QualityScoreCode = 0 | 1 | 2 | 3;

export const SCORE_NAMES = ["low", "medium", "high", "superior"] as const;
export type ScoreName = (typeof SCORE_NAMES)[number];

export const TAG_NAMES = [
  "is_transparent",
  "is_scene",
  "is_single_color",
  "is_multi_object",
  "is_figure",
] as const;
export type TagName = (typeof TAG_NAMES)[number];

export type TagValues = Record<TagName, boolean>;

export interface AnnotationRecordPayload {
  object_id: string;
  score: QualityScoreCode;
  tags: TagValues;
  source: "human";
  annotator_id: string;
  confidences: null;
  created_at: string;
  batch_id: string | null;
}

export interface BatchInfo {
  batch_id: string;
  state: "OPEN" | "LABELING" | "VALIDATING" | "CLOSED";
  created_at: string;
  validation_fraction: number;
  n_objects: number;
  n_labeled: number;
  n_validated: number;
}

export interface TaskInfo {
  assignment_id: number;
  batch_id: string;
  object_id: string;
  annotator_id: string;
  role: "PRIMARY" | "VALIDATOR";
  issued_at: string;
  expires_at: string;
  completed: boolean;
}

export interface DiscrepancyInfo {
  discrepancy_id: number;
  batch_id: string;
  object_id: string;
  field: "score" | TagName;
  primary_value: number | boolean;
  validator_value: number | boolean;
  resolved: boolean;
  resolution: number | boolean | null;
}

export interface ApiError {
  type: string;
  message: string;
  object_ids?: string[];
}
