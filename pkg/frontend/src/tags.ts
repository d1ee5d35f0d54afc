/** Binary tag entry: all five flags must be explicitly touched (or
 * confirmed as default-false) before a record can be submitted. */

import { TAG_NAMES, type TagName, type TagValues } from "./types.js";

export const TAG_LABELS: Record<TagName, string> = {
  is_transparent: "Transparent parts",
  is_scene: "Scene / environment",
  is_single_color: "Single color (unintentional)",
  is_multi_object: "Not a single object",
  is_figure: "Character / figure",
};

export const TAG_SHORTCUTS: Record<string, TagName> = {
  t: "is_transparent",
  s: "is_scene",
  c: "is_single_color",
  m: "is_multi_object",
  f: "is_figure",
};

export class TagEntry {
  private values: TagValues = this.defaults();
  private touched = new Set<TagName>();
  private confirmedDefaults = false;

  private defaults(): TagValues {
    return Object.fromEntries(TAG_NAMES.map((name) => [name, false])) as TagValues;
  }

  get current(): TagValues {
    return { ...this.values };
  }

  get(name: TagName): boolean {
    return this.values[name];
  }

  toggle(name: TagName): void {
    this.values[name] = !this.values[name];
    this.touched.add(name);
  }

  set(name: TagName, value: boolean): void {
    this.values[name] = value;
    this.touched.add(name);
  }

  /** Accept the remaining untouched tags as false. */
  confirmDefaults(): void {
    this.confirmedDefaults = true;
  }

  isTouched(name: TagName): boolean {
    return this.touched.has(name) || this.confirmedDefaults;
  }

  get complete(): boolean {
    return this.confirmedDefaults || TAG_NAMES.every((name) => this.touched.has(name));
  }

  reset(): void {
    this.values = this.defaults();
    this.touched.clear();
    this.confirmedDefaults = false;
  }
}
