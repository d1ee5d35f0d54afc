/** DOM application: viewer pane, guided scoring card, tag checklist,
 * progress strip. Pure DOM (no framework) so it runs under jsdom tests;
 * the 3D viewer is injected so tests can substitute a stub. */

import { ApiClient } from "./api.js";
import { LEVEL_GUIDANCE, STEP_PROMPTS } from "./rubric.js";
import { AnnotationSession } from "./session.js";
import { TAG_LABELS, TAG_SHORTCUTS } from "./tags.js";
import { SCORE_NAMES, TAG_NAMES, type QualityScoreCode } from "./types.js";
import type { ViewerState } from "./viewerState.js";

export interface ViewerLike {
  readonly state: ViewerState;
  load(objectId: string, url: string): Promise<void>;
  toggleEdges(): void;
}

export interface AppOptions {
  api: ApiClient;
  session: AnnotationSession;
  viewer: ViewerLike;
  /** Number of server-rendered thumbnails to show (0 disables the strip). */
  thumbnails?: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class AnnotationApp {
  private readonly root: HTMLElement;
  private readonly options: AppOptions;

  private questionText!: HTMLElement;
  private guidanceBox!: HTMLElement;
  private scoreBadge!: HTMLElement;
  private tagBoxes = new Map<string, HTMLInputElement>();
  private submitButton!: HTMLButtonElement;
  private bannerBox!: HTMLElement;
  private progressBox!: HTMLElement;
  private objectTitle!: HTMLElement;
  private thumbnailStrip!: HTMLElement;

  constructor(root: HTMLElement, options: AppOptions) {
    this.root = root;
    this.options = options;
    this.build();
    options.session.onChange(() => this.render());
  }

  private build(): void {
    const { session } = this.options;
    this.root.innerHTML = "";
    this.root.classList.add("annotation-app");

    const header = el("header", "topbar");
    this.objectTitle = el("span", "object-title", "no task");
    header.append(
      el("span", "batch-label", `batch ${session.batchId} · ${session.annotatorId}`),
      this.objectTitle,
    );
    this.progressBox = el("span", "progress", "");
    header.append(this.progressBox);
    this.root.append(header);

    this.bannerBox = el("div", "banner hidden");
    this.root.append(this.bannerBox);

    const main = el("main", "columns");
    this.root.append(main);

    // Viewer column.
    const viewerPane = el("section", "viewer-pane");
    const edgeButton = el("button", "edge-toggle", "Toggle edges (e)");
    edgeButton.dataset.testid = "edge-toggle";
    edgeButton.addEventListener("click", () => this.options.viewer.toggleEdges());
    viewerPane.append(edgeButton);
    this.thumbnailStrip = el("div", "thumbnails");
    viewerPane.append(this.thumbnailStrip);
    main.append(viewerPane);

    // Annotation column.
    const panel = el("section", "panel");
    main.append(panel);

    const rubricCard = el("div", "rubric-card");
    this.questionText = el("p", "question");
    rubricCard.append(this.questionText);
    const yes = el("button", "answer yes", "Yes");
    yes.dataset.testid = "answer-yes";
    yes.addEventListener("click", () => {
      session.flow.answer(true);
      this.render();
    });
    const no = el("button", "answer no", "No");
    no.dataset.testid = "answer-no";
    no.addEventListener("click", () => {
      session.flow.answer(false);
      this.render();
    });
    const back = el("button", "answer back", "Back");
    back.dataset.testid = "answer-back";
    back.addEventListener("click", () => {
      session.flow.back();
      this.render();
    });
    rubricCard.append(yes, no, back);
    this.guidanceBox = el("div", "guidance hidden");
    const highList = el("ul");
    for (const line of LEVEL_GUIDANCE.high) highList.append(el("li", undefined, line));
    const superiorList = el("ul");
    for (const line of LEVEL_GUIDANCE.superior) superiorList.append(el("li", undefined, line));
    this.guidanceBox.append(
      el("strong", undefined, "High:"),
      highList,
      el("strong", undefined, "Superior:"),
      superiorList,
    );
    rubricCard.append(this.guidanceBox);
    this.scoreBadge = el("p", "score-badge");
    this.scoreBadge.dataset.testid = "score-badge";
    rubricCard.append(this.scoreBadge);
    panel.append(rubricCard);

    // Expert override picker.
    const expertRow = el("div", "expert-row");
    expertRow.append(el("span", undefined, "Expert score: "));
    SCORE_NAMES.forEach((name, code) => {
      const button = el("button", "expert", `${code} ${name}`);
      button.dataset.testid = `expert-${code}`;
      button.addEventListener("click", () => session.setExpertScore(code as QualityScoreCode));
      expertRow.append(button);
    });
    panel.append(expertRow);

    // Tag checklist.
    const tagCard = el("div", "tag-card");
    for (const name of TAG_NAMES) {
      const row = el("label", "tag-row");
      const box = el("input") as HTMLInputElement;
      box.type = "checkbox";
      box.dataset.testid = `tag-${name}`;
      box.addEventListener("change", () => {
        session.tags.set(name, box.checked);
        this.render();
      });
      this.tagBoxes.set(name, box);
      row.append(box, el("span", undefined, TAG_LABELS[name]));
      tagCard.append(row);
    }
    const confirm = el("button", "confirm-defaults", "Remaining tags are all No");
    confirm.dataset.testid = "confirm-defaults";
    confirm.addEventListener("click", () => {
      session.tags.confirmDefaults();
      this.render();
    });
    tagCard.append(confirm);
    panel.append(tagCard);

    this.submitButton = el("button", "submit", "Submit (enter)") as HTMLButtonElement;
    this.submitButton.dataset.testid = "submit";
    this.submitButton.addEventListener("click", () => {
      void this.options.session.submitAndNext().then(
        (task) => {
          if (task) void this.loadCurrentObject();
        },
        () => undefined, // failure state already captured in the banner
      );
    });
    panel.append(this.submitButton);

    this.bindKeyboard();
    this.render();
  }

  private bindKeyboard(): void {
    const { session, viewer } = this.options;
    document.addEventListener("keydown", (event) => {
      if (event.target instanceof HTMLInputElement && event.target.type === "text") return;
      const key = event.key.toLowerCase();
      if (key in TAG_SHORTCUTS) {
        session.tags.toggle(TAG_SHORTCUTS[key]);
        this.render();
      } else if (key >= "1" && key <= "4") {
        session.setExpertScore((Number(key) - 1) as QualityScoreCode);
      } else if (key === "e") {
        viewer.toggleEdges();
      } else if (key === "enter" && session.canSubmit) {
        this.submitButton.click();
      }
    });
  }

  async start(): Promise<void> {
    const task = await this.options.session.loadNext();
    if (task) await this.loadCurrentObject();
  }

  private async loadCurrentObject(): Promise<void> {
    const task = this.options.session.currentTask;
    if (!task) return;
    this.renderThumbnails(task.object_id);
    await this.options.viewer.load(task.object_id, this.options.api.modelUrl(task.object_id));
    this.render();
  }

  private renderThumbnails(objectId: string): void {
    this.thumbnailStrip.innerHTML = "";
    const count = this.options.thumbnails ?? 0;
    for (let index = 0; index < count; index += 1) {
      const img = el("img", "thumb") as HTMLImageElement;
      img.src = this.options.api.viewUrl(objectId, index);
      img.alt = `view ${index}`;
      this.thumbnailStrip.append(img);
    }
  }

  render(): void {
    const { session } = this.options;
    const snapshot = session.snapshot;
    const task = snapshot.task;

    this.objectTitle.textContent = task
      ? `${task.object_id} (${task.role.toLowerCase()})`
      : snapshot.status === "finished"
        ? "all tasks done"
        : "no task";
    this.progressBox.textContent = `${snapshot.submitted} submitted`;

    if (snapshot.banner) {
      this.bannerBox.textContent = snapshot.banner;
      this.bannerBox.classList.remove("hidden");
    } else {
      this.bannerBox.classList.add("hidden");
    }

    const step = session.flow.step;
    if (step === "DONE") {
      const score = session.resolvedScore;
      this.questionText.textContent = "Scoring complete.";
      this.scoreBadge.textContent = score === null ? "" : `score: ${score} (${SCORE_NAMES[score]})`;
    } else {
      this.questionText.textContent = STEP_PROMPTS[step];
      const expert = session.resolvedScore;
      this.scoreBadge.textContent =
        expert !== null ? `score: ${expert} (${SCORE_NAMES[expert]}, expert)` : "";
    }
    this.guidanceBox.classList.toggle("hidden", step !== "PROFESSIONAL");

    for (const [name, box] of this.tagBoxes) {
      box.checked = session.tags.get(name as (typeof TAG_NAMES)[number]);
    }
    this.submitButton.disabled = !session.canSubmit || snapshot.status === "submitting";
  }
}
