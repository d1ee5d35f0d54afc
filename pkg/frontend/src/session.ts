/** One annotator's task loop: lease a task, score + tag it, submit, repeat.
 *
 * Submission failures are non-destructive: network problems keep the local
 * state and raise a retry banner; a stale assignment discards local state
 * and loads the replacement task.
 */

import { ApiClient, ServiceError } from "./api.js";
import { ScoringFlow } from "./rubric.js";
import { TagEntry } from "./tags.js";
import type { AnnotationRecordPayload, QualityScoreCode, TaskInfo } from "./types.js";

export type SessionStatus =
  | "idle"
  | "loading"
  | "annotating"
  | "submitting"
  | "retry"
  | "finished"
  | "batch-inactive";

export interface SessionSnapshot {
  status: SessionStatus;
  task: TaskInfo | null;
  banner: string | null;
  submitted: number;
}

function nowIsoSeconds(): string {
  return new Date().toISOString().replace(/\.\d{3}Z$/, "Z");
}

export class AnnotationSession {
  readonly flow = new ScoringFlow();
  readonly tags = new TagEntry();

  private task: TaskInfo | null = null;
  private status: SessionStatus = "idle";
  private banner: string | null = null;
  private submittedCount = 0;
  private expertScore: QualityScoreCode | null = null;
  private listeners: Array<(snapshot: SessionSnapshot) => void> = [];

  constructor(
    private readonly api: ApiClient,
    readonly batchId: string,
    readonly annotatorId: string,
  ) {}

  onChange(listener: (snapshot: SessionSnapshot) => void): void {
    this.listeners.push(listener);
  }

  get snapshot(): SessionSnapshot {
    return {
      status: this.status,
      task: this.task,
      banner: this.banner,
      submitted: this.submittedCount,
    };
  }

  get currentTask(): TaskInfo | null {
    return this.task;
  }

  private emit(): void {
    const snapshot = this.snapshot;
    for (const listener of this.listeners) listener(snapshot);
  }

  private setStatus(status: SessionStatus, banner: string | null = null): void {
    this.status = status;
    this.banner = banner;
    this.emit();
  }

  /** Direct 4-level picker for trained annotators; bypasses the guided flow. */
  setExpertScore(score: QualityScoreCode | null): void {
    this.expertScore = score;
    this.emit();
  }

  get resolvedScore(): QualityScoreCode | null {
    return this.expertScore ?? this.flow.derivedScore;
  }

  /** A record may only be built once scoring finished and every tag was touched. */
  get canSubmit(): boolean {
    return this.task !== null && this.resolvedScore !== null && this.tags.complete;
  }

  private resetAnnotationState(): void {
    this.flow.reset();
    this.tags.reset();
    this.expertScore = null;
  }

  async loadNext(): Promise<TaskInfo | null> {
    this.setStatus("loading");
    try {
      this.task = await this.api.nextTask(this.batchId, this.annotatorId);
    } catch (error) {
      if (error instanceof ServiceError && error.detail.type === "BatchNotActiveError") {
        this.task = null;
        this.setStatus("batch-inactive");
        return null;
      }
      this.task = null;
      this.setStatus("retry", `Could not fetch the next task: ${String(error)}`);
      throw error;
    }
    this.resetAnnotationState();
    this.setStatus(this.task ? "annotating" : "finished");
    return this.task;
  }

  buildRecord(): AnnotationRecordPayload {
    if (this.task === null || this.resolvedScore === null || !this.tags.complete) {
      throw new Error("annotation is incomplete");
    }
    return {
      object_id: this.task.object_id,
      score: this.resolvedScore,
      tags: this.tags.current,
      source: "human",
      annotator_id: this.annotatorId,
      confidences: null,
      created_at: nowIsoSeconds(),
      batch_id: this.task.batch_id,
    };
  }

  /** Submit the current annotation and advance to the next task. */
  async submitAndNext(): Promise<TaskInfo | null> {
    if (!this.canSubmit || this.task === null) {
      throw new Error("annotation is incomplete");
    }
    const record = this.buildRecord();
    this.setStatus("submitting");
    try {
      await this.api.submitAnnotation(this.task.assignment_id, record);
    } catch (error) {
      if (error instanceof ServiceError && error.isStaleAssignment) {
        // Someone else took over this object; drop local state and move on.
        this.setStatus("loading", "Assignment expired; loading a replacement task.");
        return this.loadNext();
      }
      // Keep everything the annotator entered and let them retry.
      this.setStatus("retry", `Submit failed: ${String(error)} — your annotation is kept.`);
      throw error;
    }
    this.submittedCount += 1;
    return this.loadNext();
  }
}
