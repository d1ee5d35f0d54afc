/** Guided scoring flow: three yes/no questions deriving the quality score.
 *
 * The walk mirrors the service-side decision function exactly:
 * not identifiable -> low; identifiable but untextured -> medium;
 * professional finish decides high vs superior.
 */

import type { QualityScoreCode } from "./types.js";

export type FlowStep = "IDENTIFIABLE" | "TEXTURED" | "PROFESSIONAL" | "DONE";

export interface FlowAnswers {
  identifiable?: boolean;
  textured?: boolean;
  professional?: boolean;
}

export function scoreFromAnswers(
  identifiable: boolean,
  textured: boolean,
  professional: boolean,
): QualityScoreCode {
  if (!identifiable) return 0;
  if (!textured) return 1;
  return professional ? 3 : 2;
}

export const STEP_PROMPTS: Record<Exclude<FlowStep, "DONE">, string> = {
  IDENTIFIABLE: "Can you tell what this object is?",
  TEXTURED: "Does it carry real material texture and color (not just a bare/untextured surface)?",
  PROFESSIONAL: "Is the texturing professional: rich surface detail, harmonious colors, convincing proportions?",
};

/** Guidance shown at the PROFESSIONAL step to separate the top two levels. */
export const LEVEL_GUIDANCE = {
  high: [
    "Base colors present but without much richness",
    "Acceptable shapes; not rough, not finely detailed",
    "Textures go beyond flat surfaces but stay simple",
    "Comfortable to look at, light on fine detail",
  ],
  superior: [
    "Rich, harmonious colors that fit the style",
    "Proportions match a real reference or the intended style",
    "Detailed surface texturing with convincing lighting",
    "Plenty of deliberate detail: patterns, ornaments, accents",
  ],
} as const;

/** Walks the question sequence; the score exists only once the walk ends. */
export class ScoringFlow {
  private answers: FlowAnswers = {};
  private cursor: Exclude<FlowStep, "DONE"> | "DONE" = "IDENTIFIABLE";

  get step(): FlowStep {
    return this.cursor;
  }

  get currentAnswers(): FlowAnswers {
    return { ...this.answers };
  }

  /** The derived score; null until the flow reaches DONE. */
  get derivedScore(): QualityScoreCode | null {
    if (this.cursor !== "DONE") return null;
    return scoreFromAnswers(
      this.answers.identifiable ?? false,
      this.answers.textured ?? false,
      this.answers.professional ?? false,
    );
  }

  /** Answer the question at the cursor and advance along the live path.
   *
   * Answers on branches no longer reachable are retained but ignored by
   * the walk, so re-answering an earlier question recomputes the score.
   */
  answer(value: boolean): void {
    switch (this.cursor) {
      case "IDENTIFIABLE":
        this.answers.identifiable = value;
        this.cursor = value ? "TEXTURED" : "DONE";
        break;
      case "TEXTURED":
        this.answers.textured = value;
        this.cursor = value ? "PROFESSIONAL" : "DONE";
        break;
      case "PROFESSIONAL":
        this.answers.professional = value;
        this.cursor = "DONE";
        break;
      case "DONE":
        break; // flow complete; reset() or back() first
    }
  }

  /** Step back to the previous question on the current path. */
  back(): void {
    if (this.cursor === "IDENTIFIABLE") return;
    if (this.cursor === "TEXTURED") {
      this.cursor = "IDENTIFIABLE";
      return;
    }
    if (this.cursor === "PROFESSIONAL") {
      this.cursor = "TEXTURED";
      return;
    }
    // DONE: return to the last question that was actually asked.
    if (this.answers.identifiable === false) this.cursor = "IDENTIFIABLE";
    else if (this.answers.textured === false) this.cursor = "TEXTURED";
    else this.cursor = "PROFESSIONAL";
  }

  reset(): void {
    this.answers = {};
    this.cursor = "IDENTIFIABLE";
  }
}
